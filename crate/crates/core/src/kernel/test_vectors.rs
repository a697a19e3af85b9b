use nalgebra::DVector;

use crate::error::Result;
use crate::kernel::KernelConfig;
use crate::model::MeasurementSet;
use crate::scalar::Scalar;

/// Where a test vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TestVectorSource {
    /// Index into the measurement list the set was built from.
    pub measurement: usize,
    /// Column of `√(d·K)` used as offset.
    pub axis: usize,
    /// `+1` or `-1`.
    pub sign: i8,
}

/// Evaluation points of the kernel transform.
#[derive(Debug, Clone, PartialEq)]
pub struct TestVectorSet<T: Scalar> {
    vectors: Vec<DVector<T>>,
    provenance: Vec<TestVectorSource>,
}

impl<T: Scalar> TestVectorSet<T> {
    /// Arbitrary test vectors, e.g. for validation sweeps. Provenance is left
    /// empty.
    pub fn from_vectors(vectors: Vec<DVector<T>>) -> Self {
        Self { vectors, provenance: Vec::new() }
    }

    pub fn vectors(&self) -> &[DVector<T>] {
        &self.vectors
    }

    pub fn provenance(&self) -> &[TestVectorSource] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Places `2·d` test vectors around every measurement: `y_l ± (√(d·K))_i`
/// for each column `i` of the principal square root, in measurement order,
/// `+` before `-`.
pub fn select_test_vectors<T: Scalar>(
    measurements: &MeasurementSet<T>,
    kernel: &KernelConfig<T>,
) -> Result<TestVectorSet<T>> {
    let d = measurements.dim();
    kernel.check_dim(d)?;
    let root = kernel.offsets();
    let mut vectors = Vec::with_capacity(2 * d * measurements.len());
    let mut provenance = Vec::with_capacity(vectors.capacity());
    for (l, y) in measurements.measurements().iter().enumerate() {
        for axis in 0..d {
            let col = root.column(axis);
            vectors.push(y + col);
            vectors.push(y - col);
            provenance.push(TestVectorSource { measurement: l, axis, sign: 1 });
            provenance.push(TestVectorSource { measurement: l, axis, sign: -1 });
        }
    }
    Ok(TestVectorSet { vectors, provenance })
}
