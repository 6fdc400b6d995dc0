pub mod lang;
pub mod subtitle;
pub mod sync;
pub mod dialogue;
pub mod sentence;
pub mod catalog;
pub mod store;
pub mod provider;
pub mod corpus;
pub mod pipeline;
pub mod config;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/subtitles.md")]
    mod subtitles {}
    #[doc = include_str!("../../../book/src/synchronization.md")]
    mod synchronization {}
    #[doc = include_str!("../../../book/src/dialogues.md")]
    mod dialogues {}
    #[doc = include_str!("../../../book/src/sentences.md")]
    mod sentences {}
    #[doc = include_str!("../../../book/src/catalog.md")]
    mod catalog {}
    #[doc = include_str!("../../../book/src/store.md")]
    mod store {}
    #[doc = include_str!("../../../book/src/providers.md")]
    mod providers {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
}
