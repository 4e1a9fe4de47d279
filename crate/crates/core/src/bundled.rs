//! Data files shipped with the crate.
//!
//! Lexicon contents are editorial reconstructions. Sizes:
//!
//! | lexicon | entries |
//! |---|---|
//! | `first_name` | 80 (40 `gender=male`, 40 `gender=female`) |
//! | `last_name` | 40 |
//! | `city` / `country` | 36 / 30 |
//! | `protected` | 15 (`category=race/religion/sexuality`) |
//! | `pos_adj` / `neg_adj` / `neutral_adj` | 24 / 24 / 25 |
//! | `pos_verb` / `neg_verb` / `neutral_verb` | 9 / 8 / 7 (plus `_past` forms) |
//! | `air_noun`, `profession`, `animal`, `vehicle`, `person_noun` | domain nouns |
//! | `pos_phrase` / `neg_phrase` | 5 / 5 |

use std::sync::OnceLock;

use crate::lexicon::LexiconStore;
use crate::suite::{SuiteError, TestSuite};

pub const LEXICONS: &str = include_str!("../data/lexicons.txt");
pub const DEMO_LEXICONS: &str = include_str!("../data/demo_lexicons.txt");
pub const THESAURUS: &str = include_str!("../data/thesaurus.txt");
pub const MASK_TABLE: &str = include_str!("../data/mask_table.txt");

pub const SENTIMENT_MINI_SUITE: &str = include_str!("../data/suites/sentiment_mini.json");
pub const SENTIMENT_SUITE: &str = include_str!("../data/suites/sentiment.json");
pub const QQP_SUITE: &str = include_str!("../data/suites/qqp.json");
pub const MC_SUITE: &str = include_str!("../data/suites/mc.json");

/// Names accepted by [`suite`].
pub const SUITE_NAMES: [&str; 4] = ["sentiment_mini", "sentiment", "qqp", "mc"];

/// The general-purpose lexicons.
pub fn lexicons() -> &'static LexiconStore {
    static STORE: OnceLock<LexiconStore> = OnceLock::new();
    STORE.get_or_init(|| LexiconStore::parse(LEXICONS).expect("bundled lexicons parse"))
}

/// The 2×2×3 `NEGATION`/`POS_VERB`/`THING` demo lexicons.
pub fn demo_lexicons() -> LexiconStore {
    LexiconStore::parse(DEMO_LEXICONS).expect("demo lexicons parse")
}

/// Bundled lexicons plus the demo lexicons.
pub fn all_lexicons() -> LexiconStore {
    lexicons().clone().merge(demo_lexicons()).expect("bundled lexicon names are disjoint")
}

pub fn suite(name: &str) -> Option<Result<TestSuite, SuiteError>> {
    let src = match name {
        "sentiment_mini" => SENTIMENT_MINI_SUITE,
        "sentiment" => SENTIMENT_SUITE,
        "qqp" => QQP_SUITE,
        "mc" => MC_SUITE,
        _ => return None,
    };
    Some(TestSuite::from_json(src))
}
