use super::labels::{LabelMap, IGNORE};
use crate::error::{Error, Result};

/// Per-class pixel counts with [`IGNORE`] excluded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassStats {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl ClassStats {
    /// True when no pixel was counted; probabilities are then undefined.
    pub fn is_degenerate(&self) -> bool {
        self.total == 0
    }

    pub fn probabilities(&self) -> Option<Vec<f64>> {
        if self.is_degenerate() {
            return None;
        }
        let t = self.total as f64;
        Some(self.counts.iter().map(|&c| c as f64 / t).collect())
    }

    pub fn merge(&mut self, other: &ClassStats) -> Result<()> {
        if other.counts.len() != self.counts.len() {
            return Err(Error::dim("class stats over different class counts"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }
}

pub fn compute_class_stats<'a>(labels: impl IntoIterator<Item = &'a LabelMap>, classes: usize) -> Result<ClassStats> {
    if classes == 0 {
        return Err(Error::Parameter("class count must be at least 1".into()));
    }
    let mut counts = vec![0u64; classes];
    for map in labels {
        for &id in &map.ids {
            if id == IGNORE {
                continue;
            }
            let slot = counts
                .get_mut(id as usize)
                .ok_or_else(|| Error::Parameter(format!("label id {id} outside 0..{classes}")))?;
            *slot += 1;
        }
    }
    Ok(ClassStats {
        total: counts.iter().sum(),
        counts,
    })
}
