pub mod checkpoint;
pub mod config;
pub mod error;
pub mod export;
pub mod records;
pub mod report;
pub mod run;
pub mod serial;
pub mod vocab_file;
