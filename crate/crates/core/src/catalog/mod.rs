//! Indicator catalogs: blocks of dot-numbered, weighted yes/no questions.

mod analysis;
mod format;
mod id;
mod lint;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::decimal::Score;

pub use analysis::{best_case_subtree, subtree_range, ScoreRange, MAX_ENUMERATED_DESCENDANTS};
pub use format::{
    convert_published, load_catalog, parse_block, parse_catalog, serialize_block, serialize_catalog, BlockSource,
    CatalogManifest, ManifestBlock, CATALOG_HEADER,
};
pub use id::{IdParseError, IndicatorId};
pub use lint::{lint_catalog, lint_catalog_with, lint_sources, LintCode, LintFinding, LintReport, Severity};

/// Largest score magnitude an indicator may carry.
pub const MAX_WEIGHT: Score = Score::FOUR;

/// Advisory annotation for the relevance, mitigation, validation pattern.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Relevance,
    Mitigation,
    Validation,
    #[default]
    Other,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Relevance => "relevance",
            Layer::Mitigation => "mitigation",
            Layer::Validation => "validation",
            Layer::Other => "other",
        }
    }

    pub fn parse(text: &str) -> Option<Layer> {
        match text.trim().to_ascii_lowercase().as_str() {
            "" | "other" => Some(Layer::Other),
            "relevance" => Some(Layer::Relevance),
            "mitigation" => Some(Layer::Mitigation),
            "validation" => Some(Layer::Validation),
            _ => None,
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Indicator {
    pub id: IndicatorId,
    pub text: String,
    pub yes_score: Score,
    pub no_score: Score,
    pub layer: Layer,
}

impl Indicator {
    pub fn new(id: IndicatorId, text: impl Into<String>, yes_score: Score, no_score: Score) -> Self {
        Indicator { id, text: text.into(), yes_score, no_score, layer: Layer::Other }
    }

    pub fn with_layer(mut self, layer: Layer) -> Self {
        self.layer = layer;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StructureIssue {
    #[error("indicator {id} has no parent {parent}")]
    OrphanParent { id: IndicatorId, parent: IndicatorId },
    #[error("indicator {id} appears more than once")]
    DuplicateId { id: IndicatorId },
    #[error("{0}")]
    BadSegment(IdParseError),
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("block `{block}`, line {line}: {reason}")]
    Parse { block: String, line: u64, reason: String },
    #[error("block `{block}`: {issue}")]
    Structure { block: String, issue: StructureIssue },
    #[error("block `{0}` is listed more than once")]
    DuplicateBlock(String),
    #[error("block `{block}` has no indicator {id}")]
    UnknownIndicator { block: String, id: IndicatorId },
    #[error("subtree under {id} has {descendants} descendants; enumeration is limited to {limit}")]
    SubtreeTooLarge { id: IndicatorId, descendants: usize, limit: usize },
    #[error("invalid catalog manifest: {0}")]
    Manifest(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One self-contained tree of indicators.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Block {
    pub block_id: String,
    pub title: String,
    #[serde(serialize_with = "indicator_values")]
    indicators: BTreeMap<IndicatorId, Indicator>,
    root_order: Vec<IndicatorId>,
}

fn indicator_values<S: Serializer>(map: &BTreeMap<IndicatorId, Indicator>, serializer: S) -> Result<S::Ok, S::Error> {
    serializer.collect_seq(map.values())
}

impl Block {
    /// Builds a block, rejecting duplicate ids and orphaned children.
    pub fn new(
        block_id: impl Into<String>,
        title: impl Into<String>,
        indicators: impl IntoIterator<Item = Indicator>,
    ) -> Result<Block, CatalogError> {
        let block_id = block_id.into();
        let mut map = BTreeMap::new();
        for indicator in indicators {
            let id = indicator.id.clone();
            if map.insert(id.clone(), indicator).is_some() {
                return Err(CatalogError::Structure { block: block_id, issue: StructureIssue::DuplicateId { id } });
            }
        }
        if let Some(issue) = orphan_issues(map.keys()).into_iter().next() {
            return Err(CatalogError::Structure { block: block_id, issue });
        }
        let root_order = map.keys().filter(|id| id.is_root()).cloned().collect();
        Ok(Block { block_id, title: title.into(), indicators: map, root_order })
    }

    pub fn len(&self) -> usize {
        self.indicators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicators.is_empty()
    }

    pub fn get(&self, id: &IndicatorId) -> Option<&Indicator> {
        self.indicators.get(id)
    }

    pub fn contains(&self, id: &IndicatorId) -> bool {
        self.indicators.contains_key(id)
    }

    /// Indicators in document (id) order.
    pub fn indicators(&self) -> impl Iterator<Item = &Indicator> + Clone {
        self.indicators.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &IndicatorId> {
        self.indicators.keys()
    }

    pub fn roots(&self) -> &[IndicatorId] {
        &self.root_order
    }

    pub fn children(&self, id: &IndicatorId) -> Result<Vec<IndicatorId>, CatalogError> {
        if !self.contains(id) {
            return Err(self.unknown(id));
        }
        Ok(self.children_unchecked(id).cloned().collect())
    }

    pub(crate) fn children_unchecked<'a>(&'a self, id: &'a IndicatorId) -> impl Iterator<Item = &'a IndicatorId> {
        self.descendants_unchecked(id).filter(move |d| d.depth() == id.depth() + 1)
    }

    /// Strict descendants in document order.
    pub fn descendants(&self, id: &IndicatorId) -> Result<Vec<IndicatorId>, CatalogError> {
        if !self.contains(id) {
            return Err(self.unknown(id));
        }
        Ok(self.descendants_unchecked(id).cloned().collect())
    }

    pub(crate) fn descendants_unchecked<'a>(&'a self, id: &'a IndicatorId) -> impl Iterator<Item = &'a IndicatorId> {
        use std::ops::Bound::{Excluded, Unbounded};
        self.indicators.range((Excluded(id), Unbounded)).map(|(k, _)| k).take_while(move |k| id.is_ancestor_of(k))
    }

    pub(crate) fn unknown(&self, id: &IndicatorId) -> CatalogError {
        CatalogError::UnknownIndicator { block: self.block_id.clone(), id: id.clone() }
    }
}

fn orphan_issues<'a>(ids: impl Iterator<Item = &'a IndicatorId> + Clone) -> Vec<StructureIssue> {
    let present: std::collections::HashSet<&IndicatorId> = ids.clone().collect();
    ids.filter_map(|id| {
        let parent = id.parent()?;
        (!present.contains(&parent)).then(|| StructureIssue::OrphanParent { id: id.clone(), parent })
    })
    .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CatalogRef {
    pub catalog_id: String,
    pub version: String,
}

impl fmt::Display for CatalogRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.catalog_id, self.version)
    }
}

/// A versioned, immutable set of blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Catalog {
    pub catalog_id: String,
    pub version: String,
    blocks: Vec<Block>,
}

impl Catalog {
    pub fn new(
        catalog_id: impl Into<String>,
        version: impl Into<String>,
        blocks: Vec<Block>,
    ) -> Result<Self, CatalogError> {
        let mut seen = std::collections::HashSet::new();
        for block in &blocks {
            if !seen.insert(block.block_id.as_str()) {
                return Err(CatalogError::DuplicateBlock(block.block_id.clone()));
            }
        }
        Ok(Catalog { catalog_id: catalog_id.into(), version: version.into(), blocks })
    }

    pub fn reference(&self) -> CatalogRef {
        CatalogRef { catalog_id: self.catalog_id.clone(), version: self.version.clone() }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, block_id: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.block_id == block_id)
    }

    pub fn indicator_count(&self) -> usize {
        self.blocks.iter().map(Block::len).sum()
    }

    /// Replaces one indicator's weights. `None` if the indicator does not exist.
    pub fn set_weights(&mut self, block_id: &str, id: &IndicatorId, yes_score: Score, no_score: Score) -> Option<()> {
        let block = self.blocks.iter_mut().find(|b| b.block_id == block_id)?;
        let indicator = block.indicators.get_mut(id)?;
        indicator.yes_score = yes_score;
        indicator.no_score = no_score;
        Some(())
    }
}

/// Free-standing form of [`Block::children`].
pub fn children(block: &Block, id: &IndicatorId) -> Result<Vec<IndicatorId>, CatalogError> {
    block.children(id)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn sc(t: i64) -> Score {
        Score::from_thousandths(t)
    }

    pub fn ind(id: &str, yes: i64, no: i64) -> Indicator {
        Indicator::new(id.parse().unwrap(), format!("Question {id}?"), sc(yes), sc(no))
    }

    /// The ten-row security table.
    pub fn security_block() -> Block {
        Block::new(
            "security",
            "Security",
            [
                ind("2", -1000, 0),
                ind("2.1", 360, 0),
                ind("2.2", 280, 0),
                ind("2.2.1", 0, -280),
                ind("2.3", 80, 0),
                ind("2.3.1", 0, -80),
                ind("2.4", -270, 0),
                ind("2.4.1", 180, 0),
                ind("2.4.1.1", 0, -180),
                ind("2.4.2", 90, 0),
            ],
        )
        .unwrap()
    }
}
