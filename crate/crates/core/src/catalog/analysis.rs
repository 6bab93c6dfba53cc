//! Achievable-score analysis of indicator subtrees.
//!
//! Two independent routes: [`best_case_subtree`] enumerates every yes/no
//! assignment of a subtree (bounded), [`subtree_range`] folds the tree
//! recursively (unbounded). Lint uses the recursive route; tests hold the
//! two against each other.

use serde::Serialize;

use super::{Block, CatalogError, IndicatorId};
use crate::decimal::Score;

pub const MAX_ENUMERATED_DESCENDANTS: usize = 24;

/// Minimum and maximum achievable contribution sums.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ScoreRange {
    pub min: Score,
    pub max: Score,
}

impl ScoreRange {
    pub const ZERO: ScoreRange = ScoreRange { min: Score::ZERO, max: Score::ZERO };

    fn plus(self, other: ScoreRange) -> ScoreRange {
        ScoreRange { min: self.min + other.min, max: self.max + other.max }
    }

    /// Range over complete runs of a whole block, roots included.
    pub fn for_block(block: &Block) -> ScoreRange {
        block.roots().iter().map(|r| answered_range(block, r)).fold(ScoreRange::ZERO, ScoreRange::plus)
    }
}

fn answered_range(block: &Block, id: &IndicatorId) -> ScoreRange {
    // Callers only pass ids taken from the block.
    let indicator = block.get(id).expect("id from block");
    let below = descend(block, id);
    let yes = ScoreRange { min: indicator.yes_score + below.min, max: indicator.yes_score + below.max };
    ScoreRange { min: yes.min.min(indicator.no_score), max: yes.max.max(indicator.no_score) }
}

fn descend(block: &Block, id: &IndicatorId) -> ScoreRange {
    block.children_unchecked(id).map(|c| answered_range(block, c)).fold(ScoreRange::ZERO, ScoreRange::plus)
}

/// Achievable contribution range of `root`'s strict descendants given that
/// `root` itself was answered "yes".
pub fn subtree_range(block: &Block, root: &IndicatorId) -> Result<ScoreRange, CatalogError> {
    if !block.contains(root) {
        return Err(block.unknown(root));
    }
    Ok(descend(block, root))
}

/// Best achievable sum over `root`'s strict descendants, by exhaustive
/// enumeration of yes/no assignments. A descendant counts only when every
/// ancestor strictly below `root` is answered "yes".
pub fn best_case_subtree(block: &Block, root: &IndicatorId) -> Result<Score, CatalogError> {
    let descendants = block.descendants(root)?;
    let n = descendants.len();
    if n > MAX_ENUMERATED_DESCENDANTS {
        return Err(CatalogError::SubtreeTooLarge {
            id: root.clone(),
            descendants: n,
            limit: MAX_ENUMERATED_DESCENDANTS,
        });
    }
    if n == 0 {
        return Ok(Score::ZERO);
    }
    let parent_index: Vec<Option<usize>> = descendants
        .iter()
        .map(|d| {
            let parent = d.parent().expect("descendants have parents");
            descendants.iter().position(|x| *x == parent)
        })
        .collect();
    let weights: Vec<(i64, i64)> = descendants
        .iter()
        .map(|d| {
            let i = block.get(d).expect("id from block");
            (i.yes_score.thousandths(), i.no_score.thousandths())
        })
        .collect();

    let evaluate = |mask: u32| -> i64 {
        let mut asked = [false; MAX_ENUMERATED_DESCENDANTS];
        let mut total = 0;
        for i in 0..n {
            let reachable = match parent_index[i] {
                None => true,
                Some(p) => asked[p] && mask & (1 << p) != 0,
            };
            asked[i] = reachable;
            if reachable {
                total += if mask & (1 << i) != 0 { weights[i].0 } else { weights[i].1 };
            }
        }
        total
    };

    let masks = 0..(1u32 << n);
    #[cfg(feature = "parallel")]
    let best = {
        use rayon::prelude::*;
        masks.into_par_iter().map(evaluate).max()
    };
    #[cfg(not(feature = "parallel"))]
    let best = masks.map(evaluate).max();
    Ok(Score::from_thousandths(best.expect("at least one assignment")))
}
