//! The guide in `book/` as doc tests. Each chapter is its own module so a
//! failing snippet points at its chapter.

use doc_comment::doc_comment;

doc_comment!(include_str!("../../../book/src/introduction.md"), pub mod introduction {});
doc_comment!(include_str!("../../../book/src/surrogates.md"), pub mod surrogates {});
doc_comment!(include_str!("../../../book/src/binomial.md"), pub mod binomial {});
doc_comment!(include_str!("../../../book/src/contests.md"), pub mod contests {});
doc_comment!(include_str!("../../../book/src/bots.md"), pub mod bots {});
doc_comment!(include_str!("../../../book/src/protocol.md"), pub mod protocol {});
doc_comment!(include_str!("../../../book/src/event-log.md"), pub mod event_log {});
doc_comment!(include_str!("../../../book/src/cli.md"), pub mod cli {});
