//! Library half of the batch front end: the document formats and the
//! build/serialize bridge, shared by the binary and the integration tests.

pub mod doc;
