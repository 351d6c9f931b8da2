pub mod cli;
pub mod greens;
pub mod lmvf;
pub mod model;
pub mod oscquad;
pub mod pricer;
pub mod specfun;
pub mod transform;
pub mod validators;

#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    pub mod model {}
    #[doc = include_str!("../../../book/src/transform.md")]
    pub mod transform {}
    #[doc = include_str!("../../../book/src/greens.md")]
    pub mod greens {}
    #[doc = include_str!("../../../book/src/collocation.md")]
    pub mod collocation {}
    #[doc = include_str!("../../../book/src/pricing.md")]
    pub mod pricing {}
    #[doc = include_str!("../../../book/src/validation.md")]
    pub mod validation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
