//! Runs the guide's code listings as doc-tests. One module per chapter, so a
//! failing listing names its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}
#[doc = include_str!("../../../book/src/data.md")]
mod data {}
#[doc = include_str!("../../../book/src/degradations.md")]
mod degradations {}
#[doc = include_str!("../../../book/src/autodiff.md")]
mod autodiff {}
#[doc = include_str!("../../../book/src/classifier.md")]
mod classifier {}
#[doc = include_str!("../../../book/src/adaptation.md")]
mod adaptation {}
#[doc = include_str!("../../../book/src/experiments.md")]
mod experiments {}
#[doc = include_str!("../../../book/src/reproducibility.md")]
mod reproducibility {}
