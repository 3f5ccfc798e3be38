//! SPICE-subset netlist front end.
//!
//! See the repository README for the grammar table.

mod circuit;
mod elaborate;
mod parse;
mod value;

pub use circuit::{
    AcSpec, AnalysisDirective, Circuit, Element, ElementKind, Limit, Pulse, SourceSpec, GROUND,
};
pub use elaborate::{elaborate, ElaborateError, FlatCircuit, FlatElement, FlatKind};
pub use parse::{parse, ParseError, ParseErrorKind};
pub use value::{parse_value, ValueError};
