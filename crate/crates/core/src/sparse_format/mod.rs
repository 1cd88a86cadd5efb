//! Dense and grouped-CSR kernel representations and the binary model format.

mod dense;
mod grouped;
mod serialize;

pub use dense::{is_stored_value, DenseKernel, KernelShape};
pub use grouped::{compress, decompress, group_partition, GroupBlock, GroupedCsrKernel};
pub use serialize::{
    deserialize_model, serialize_model, LayerKind, SparseLayer, SparseModel, HEADER_LEN, MAGIC, VERSION,
};
