//! Corpus statistics: sentence and entity counts per split and type.

use std::fmt;

use super::corpus::Example;
use super::tags::{extract_spans, EntityType};
use crate::error::Result;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitStats {
    pub sentences: usize,
    /// Indexed by `EntityType as usize`: PER, LOC, ORG, MISC.
    pub entities: [usize; 4],
}

impl SplitStats {
    pub fn of(examples: &[Example]) -> Result<Self> {
        let mut s = SplitStats {
            sentences: examples.len(),
            ..Default::default()
        };
        for ex in examples {
            for span in extract_spans(&ex.tags)? {
                s.entities[span.kind as usize] += 1;
            }
        }
        Ok(s)
    }

    pub fn total_entities(&self) -> usize {
        self.entities.iter().sum()
    }
}

/// Train / dev / test statistics.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetStats {
    pub train: SplitStats,
    pub dev: SplitStats,
    pub test: SplitStats,
}

impl DatasetStats {
    pub fn total_entities(&self) -> usize {
        self.train.total_entities() + self.dev.total_entities() + self.test.total_entities()
    }

    pub fn total_sentences(&self) -> usize {
        self.train.sentences + self.dev.sentences + self.test.sentences
    }
}

/// Grand total printed in the published statistics table. The table's own
/// per-split totals add up to 12,800; the dataset check pins this figure.
pub const TMN_PUBLISHED_TOTAL_ENTITIES: usize = 12_784;

/// Published per-split statistics of the Twitter multimodal NER corpus.
pub fn tmn_reference() -> DatasetStats {
    DatasetStats {
        train: SplitStats {
            sentences: 4000,
            entities: [2217, 2091, 928, 940],
        },
        dev: SplitStats {
            sentences: 1000,
            entities: [552, 522, 247, 225],
        },
        test: SplitStats {
            sentences: 3257,
            entities: [1816, 1697, 839, 726],
        },
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<14}{:>8}{:>8}{:>8}{:>8}",
            "Entity Type", "Train", "Dev.", "Test", "Total"
        )?;
        for kind in EntityType::ALL {
            let i = kind as usize;
            let (a, b, c) = (self.train.entities[i], self.dev.entities[i], self.test.entities[i]);
            writeln!(f, "{:<14}{a:>8}{b:>8}{c:>8}{:>8}", kind.as_str(), a + b + c)?;
        }
        writeln!(
            f,
            "{:<14}{:>8}{:>8}{:>8}{:>8}",
            "Entities",
            self.train.total_entities(),
            self.dev.total_entities(),
            self.test.total_entities(),
            self.total_entities()
        )?;
        write!(
            f,
            "{:<14}{:>8}{:>8}{:>8}{:>8}",
            "Sentences",
            self.train.sentences,
            self.dev.sentences,
            self.test.sentences,
            self.total_sentences()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_rows_add_up_per_split() {
        let r = tmn_reference();
        assert_eq!(r.total_sentences(), 8257);
        assert_eq!(r.total_entities(), 12_800);
        assert_ne!(r.total_entities(), TMN_PUBLISHED_TOTAL_ENTITIES);
        assert_eq!(r.train.total_entities(), 6176);
        assert_eq!(r.dev.total_entities(), 1546);
        assert_eq!(r.test.total_entities(), 5078);
    }
}
