pub mod ast;
pub mod parser;
pub mod region;
pub mod run;

pub use parser::parse_schedule;
pub use region::{RegionValue, Remap, Selection, SetOp};
pub use run::{run_schedule, ScheduleLog};
