//! EDA text augmentation (synonym replacement, insertion, swap, deletion)
//! and the balancing pass that equalizes per-sector training-set sizes.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::attribution::SectorSamples;
use crate::company::FilledSample;
use crate::rng::{hash_label, mix_seed, Rng};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("sector {0} has no samples; balancing requires every sector non-empty")]
    EmptySector(String),
    #[error("no sectors to balance")]
    NoSectors,
    #[error("failed to read lexicon {path}: {source}")]
    LexiconIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed lexicon line {0}")]
    LexiconParse(usize),
}

/// Word -> synonyms table. Lookup is total: missing words yield no synonyms.
#[derive(Debug, Clone, Default)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

/// The lexicon shipped with the repo (about 2.4k entries); substitutable
/// via the configured lexicon path.
const BUNDLED_LEXICON: &str = include_str!("../data/lexicon.tsv");

impl SynonymLexicon {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_LEXICON).expect("bundled lexicon is well-formed")
    }

    pub fn bundled_raw() -> &'static str {
        BUNDLED_LEXICON
    }

    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<S>)>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (word, synonyms) in entries {
            map.insert(
                word.into().to_lowercase(),
                synonyms.into_iter().map(|s| s.into().to_lowercase()).collect(),
            );
        }
        SynonymLexicon { entries: map }
    }

    /// Parse the lexicon file format: `word TAB syn1,syn2,...` per line.
    pub fn load(path: &Path) -> Result<Self, AugmentError> {
        let content = std::fs::read_to_string(path).map_err(|source| AugmentError::LexiconIo {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&content)
    }

    pub fn parse(content: &str) -> Result<Self, AugmentError> {
        let mut map = BTreeMap::new();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, rest) = line
                .split_once('\t')
                .ok_or(AugmentError::LexiconParse(idx + 1))?;
            let synonyms: Vec<String> = rest
                .split(',')
                .map(|s| s.trim().to_lowercase())
                .filter(|s| !s.is_empty())
                .collect();
            if synonyms.is_empty() {
                return Err(AugmentError::LexiconParse(idx + 1));
            }
            map.insert(word.trim().to_lowercase(), synonyms);
        }
        Ok(SynonymLexicon { entries: map })
    }

    pub fn synonyms(&self, word: &str) -> &[String] {
        self.entries
            .get(&word.to_lowercase())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// How much augmentation each sector receives: every original sample gains
/// `copies` augmented variants so each sector lands near the target size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentationPlan {
    /// Twice the largest per-sector count.
    pub target_size: usize,
    /// Per-sector augmented copies per original sample.
    pub copies_per_sample: Vec<(String, usize)>,
}

pub fn plan_balancing(counts: &[(String, usize)]) -> Result<AugmentationPlan, AugmentError> {
    if counts.is_empty() {
        return Err(AugmentError::NoSectors);
    }
    for (sector, count) in counts {
        if *count == 0 {
            return Err(AugmentError::EmptySector(sector.clone()));
        }
    }
    let max = counts.iter().map(|(_, c)| *c).max().unwrap_or(0);
    let target_size = 2 * max;
    let copies_per_sample = counts
        .iter()
        .map(|(sector, count)| (sector.clone(), target_size / count - 1))
        .collect();
    Ok(AugmentationPlan {
        target_size,
        copies_per_sample,
    })
}

// The rendered template decomposes back into its field segments so each can
// be perturbed independently.
#[derive(Debug, Clone, PartialEq, Eq)]
struct TemplateFields {
    name: String,
    tags: Option<String>,
    description: Option<String>,
}

const SECTOR_SUFFIX: &str = ". Sector:";

fn parse_fields(input_text: &str) -> TemplateFields {
    let body = input_text.strip_suffix(SECTOR_SUFFIX).unwrap_or(input_text);
    let (head, description) = match body.split_once(", is ") {
        Some((h, d)) => (h, Some(d.to_string())),
        None => (body, None),
    };
    let (name, tags) = match head.split_once(", concerns ") {
        Some((n, t)) => (n.to_string(), Some(t.to_string())),
        None => (head.to_string(), None),
    };
    TemplateFields {
        name,
        tags,
        description,
    }
}

fn render_fields(fields: &TemplateFields) -> String {
    let mut text = fields.name.clone();
    if let Some(tags) = &fields.tags {
        text.push_str(", concerns ");
        text.push_str(tags);
    }
    if let Some(desc) = &fields.description {
        text.push_str(", is ");
        text.push_str(desc);
    }
    text.push_str(SECTOR_SUFFIX);
    text
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EdaOp {
    SynonymReplace,
    Insert,
    Swap,
    Delete,
}

const OPS: [EdaOp; 4] = [EdaOp::SynonymReplace, EdaOp::Insert, EdaOp::Swap, EdaOp::Delete];
const INTENSITIES: [f64; 4] = [0.05, 0.1, 0.15, 0.2];

fn augment_field(field: &str, rng: &mut Rng, lexicon: &SynonymLexicon) -> String {
    let mut tokens: Vec<String> = field.split_whitespace().map(str::to_string).collect();
    if tokens.len() < 2 {
        // Degenerate field: nothing safe to perturb.
        return field.to_string();
    }
    let op = *rng.choose(&OPS);
    let intensity = *rng.choose(&INTENSITIES);
    let touched = ((intensity * tokens.len() as f64).floor() as usize).max(1);
    match op {
        EdaOp::SynonymReplace => {
            let candidates: Vec<usize> = (0..tokens.len())
                .filter(|&i| !lexicon.synonyms(&tokens[i]).is_empty())
                .collect();
            if candidates.is_empty() {
                return tokens.join(" ");
            }
            let picks = rng.sample_indices(candidates.len(), touched.min(candidates.len()));
            for pick in picks {
                let pos = candidates[pick];
                let synonyms = lexicon.synonyms(&tokens[pos]);
                tokens[pos] = rng.choose(synonyms).clone();
            }
        }
        EdaOp::Insert => {
            for _ in 0..touched {
                let candidates: Vec<usize> = (0..tokens.len())
                    .filter(|&i| !lexicon.synonyms(&tokens[i]).is_empty())
                    .collect();
                if candidates.is_empty() {
                    break;
                }
                let source = candidates[rng.below(candidates.len())];
                let synonym = rng.choose(lexicon.synonyms(&tokens[source])).clone();
                let at = rng.below(tokens.len() + 1);
                tokens.insert(at, synonym);
            }
        }
        EdaOp::Swap => {
            for _ in 0..touched {
                let i = rng.below(tokens.len());
                let mut j = rng.below(tokens.len() - 1);
                if j >= i {
                    j += 1;
                }
                tokens.swap(i, j);
            }
        }
        EdaOp::Delete => {
            let removable = touched.min(tokens.len() - 1);
            let mut picks = rng.sample_indices(tokens.len(), removable);
            picks.sort_unstable_by(|a, b| b.cmp(a));
            for pos in picks {
                tokens.remove(pos);
            }
        }
    }
    tokens.join(" ")
}

/// Apply one randomly chosen EDA operation, at random intensity, to each
/// template field independently. The target text is never modified.
pub fn eda_augment(sample: &FilledSample, seed: u64, lexicon: &SynonymLexicon) -> FilledSample {
    let mut rng = Rng::new(seed);
    let mut fields = parse_fields(&sample.input_text);
    fields.name = augment_field(&fields.name, &mut rng, lexicon);
    if let Some(tags) = &fields.tags {
        fields.tags = Some(augment_field(tags, &mut rng, lexicon));
    }
    if let Some(desc) = &fields.description {
        fields.description = Some(augment_field(desc, &mut rng, lexicon));
    }
    FilledSample {
        input_text: render_fields(&fields),
        target_text: sample.target_text.clone(),
    }
}

/// Balance per-sector sample lists: every original sample in a sector with
/// count `c` gains `target/c - 1` augmented copies (originals retained), so
/// every sector lands in `(target - c, target]` and the largest sector hits
/// the target exactly.
pub fn balance(
    sets: &[SectorSamples],
    lexicon: &SynonymLexicon,
    base_seed: u64,
) -> Result<Vec<SectorSamples>, AugmentError> {
    let counts: Vec<(String, usize)> = sets
        .iter()
        .map(|s| (s.sector_id.as_str().to_string(), s.samples.len()))
        .collect();
    let plan = plan_balancing(&counts)?;
    let mut out = Vec::with_capacity(sets.len());
    for (set, (_, copies)) in sets.iter().zip(&plan.copies_per_sample) {
        let mut samples = Vec::with_capacity(set.samples.len() * (copies + 1));
        let sector_hash = hash_label(set.sector_id.as_str());
        for (sample_idx, sample) in set.samples.iter().enumerate() {
            samples.push(sample.clone());
            for copy_idx in 0..*copies {
                let seed = mix_seed(&[base_seed, sector_hash, sample_idx as u64, copy_idx as u64]);
                samples.push(eda_augment(sample, seed, lexicon));
            }
        }
        out.push(SectorSamples {
            sector_id: set.sector_id.clone(),
            sector_name: set.sector_name.clone(),
            samples,
        });
    }
    Ok(out)
}
