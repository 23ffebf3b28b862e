// stub
use super::Result;
pub struct EvalSummary;
pub fn evaluate() -> Result<()> { Ok(()) }
pub fn sparsify_dir() -> Result<()> { Ok(()) }
