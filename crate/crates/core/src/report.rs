//! Report serialization (in progress).
