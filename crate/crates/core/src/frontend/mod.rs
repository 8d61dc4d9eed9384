//! Parser and SSA lowering for the application language.

pub mod ast;
pub mod lexer;
pub mod lower;
pub mod parser;

pub use lower::{label_map, lower, LabelMap};
pub use parser::parse;

use crate::error::Result;
use crate::ir::IrModule;

/// Parse and lower a source file in one step.
pub fn compile_source(file: &str, src: &str) -> Result<IrModule> {
    lower(&parse(file, src)?)
}
