pub mod bgp;
pub mod btree;
mod bytes;
pub mod db;
pub mod dictionary;
pub mod error;
pub mod input;
pub mod io;
pub mod layout;
pub mod loader;
pub mod model;
pub mod nm;
pub mod primitives;
pub mod sort;
pub mod sparql;
pub mod store;
pub mod stream;

pub use error::{Error, ErrorCategory, Result};
pub use model::{Edge, Ordering, PartialOrdering, Pos, Term, TermId, TriplePattern};
