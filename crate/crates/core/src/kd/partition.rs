use crate::autodiff::{Graph, Var};
use crate::data::top_fraction_mask;
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Items split by training popularity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HotColdPartition {
    hot: Vec<bool>,
    popularity: Vec<u64>,
}

impl HotColdPartition {
    pub fn is_hot(&self, item: usize) -> bool {
        self.hot[item]
    }

    pub fn num_items(&self) -> usize {
        self.hot.len()
    }

    pub fn hot_items(&self) -> Vec<usize> {
        (0..self.hot.len()).filter(|&i| self.hot[i]).collect()
    }

    pub fn cold_items(&self) -> Vec<usize> {
        (0..self.hot.len()).filter(|&i| !self.hot[i]).collect()
    }

    pub fn popularity(&self) -> &[u64] {
        &self.popularity
    }
}

/// The `round(fraction * |V|)` most popular items are hot; ties go to the
/// lower id.
pub fn partition_hot_cold(popularity: &[u64], fraction: f64) -> Result<HotColdPartition> {
    if popularity.is_empty() {
        return Err(Error::InvalidInput("empty catalog".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(
            "hot_fraction",
            format!("{fraction} is outside (0, 1)"),
        ));
    }
    Ok(HotColdPartition {
        hot: top_fraction_mask(popularity, fraction),
        popularity: popularity.to_vec(),
    })
}

/// Order-preserving hot-only and cold-only subsequences of a session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubSessions {
    pub hot: Vec<usize>,
    pub cold: Vec<usize>,
}

pub fn split_session(items: &[usize], partition: &HotColdPartition) -> SubSessions {
    let (hot, cold) = items.iter().partition(|&&i| partition.is_hot(i));
    SubSessions { hot, cold }
}

/// Cross-model views of one session from its sub-session vectors (`1 x N`
/// each, `None` for an empty side).
///
/// With both sides present the cold halves are swapped:
/// `z_tea = [hot_tea, cold_stu]`, `z_stu = [hot_stu, cold_tea]`. With a single
/// side the same-type vectors of the two models are paired instead:
/// `z_tea = [x_tea, x_stu]`, `z_stu = [x_stu, x_tea]`.
pub fn recombine<T: Real>(
    g: &mut Graph<T>,
    teacher: (Option<Var>, Option<Var>),
    student: (Option<Var>, Option<Var>),
) -> Result<(Var, Var)> {
    match (teacher, student) {
        ((Some(th), Some(tc)), (Some(sh), Some(sc))) => {
            Ok((g.concat_cols(&[th, sc])?, g.concat_cols(&[sh, tc])?))
        }
        ((Some(t), None), (Some(s), None)) | ((None, Some(t)), (None, Some(s))) => {
            Ok((g.concat_cols(&[t, s])?, g.concat_cols(&[s, t])?))
        }
        _ => Err(Error::InvalidInput(
            "teacher and student sub-sessions disagree or are both empty".into(),
        )),
    }
}
