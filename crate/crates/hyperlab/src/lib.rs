#![doc = include_str!("../README.md")]

pub mod numerics;
pub mod rank_one_group;
pub mod measures;
pub mod boundary_operators;
pub mod spherical_analysis;
pub mod llt_lab;
pub mod furstenberg_lab;

/// Chapters of the mdbook in `book/`, compiled here so their examples run as doctests.
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/group.md")]
    pub mod group {}
    #[doc = include_str!("../../../book/src/measures.md")]
    pub mod measures {}
    #[doc = include_str!("../../../book/src/operators.md")]
    pub mod operators {}
    #[doc = include_str!("../../../book/src/transforms.md")]
    pub mod transforms {}
    #[doc = include_str!("../../../book/src/local_limit.md")]
    pub mod local_limit {}
    #[doc = include_str!("../../../book/src/boundary.md")]
    pub mod boundary {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
