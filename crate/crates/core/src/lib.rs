//! Distributed-memory long-read overlap detection and alignment.
//!
//! The pipeline runs as `P` cooperating ranks that communicate only through
//! bulk-synchronous all-to-all exchanges ([`exchange`]). It has four stages:
//!
//! 1. [`bloom`]: stream every k-mer to its owner rank and keep the ones a
//!    distributed Bloom filter has seen more than once.
//! 2. [`table`]: stream k-mers again with their `(rid, position)` metadata,
//!    fill the owner's hash table and keep k-mers whose count lies in `[2, m]`.
//! 3. [`overlap`]: every retained k-mer contributes all read pairs that share
//!    it; pairs are routed to the owner of one of their reads and merged.
//! 4. [`align`]: fetch the non-local reads each rank needs and extend every
//!    surviving seed with an x-drop kernel.
//!
//! [`pipeline`] wires the stages together and [`sim`] generates synthetic
//! read sets with known overlaps for testing.

pub mod align;
pub mod bloom;
pub mod error;
pub mod exchange;
pub mod kmer;
pub mod overlap;
pub mod pipeline;
pub mod seq_io;
pub mod sim;
pub mod table;

pub use error::{Error, Result};
