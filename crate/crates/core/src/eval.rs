//! Hamming ranking and retrieval metrics.
//!
//! Protocol: an item is relevant to a query when the two share at least one
//! label; average precision is taken over the full ranking (no cutoff);
//! queries without any relevant item are skipped and counted.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{hamming_words, Encoder, PackedCodes};
use crate::error::{Error, Result};
use crate::model::{FeatureMatrix, LabelMatrix, Modality};

/// Human-readable statement of the evaluation protocol, stored in reports.
pub const PROTOCOL: &str = "relevance: share >= 1 label; mAP over the full Hamming ranking, \
ties broken by database index; queries without relevant items excluded";

/// Number of interpolated PR points (recall 0.00, 0.01, ..., 1.00).
pub const PR_POINTS: usize = 101;

/// Database indices in ascending (Hamming distance, index) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    pub query: usize,
    pub order: Vec<usize>,
    pub distances: Vec<u32>,
}

/// Relevance mask of every database item for one query column.
pub fn relevance(y_query: &LabelMatrix, query: usize, y_db: &LabelMatrix) -> Result<Vec<bool>> {
    if y_query.classes() != y_db.classes() {
        return Err(Error::DimensionMismatch {
            symbol: "label classes".into(),
            expected: y_db.classes().to_string(),
            actual: y_query.classes().to_string(),
        });
    }
    let active: Vec<usize> = (0..y_query.classes()).filter(|&c| y_query.has(c, query)).collect();
    Ok((0..y_db.samples())
        .map(|i| active.iter().any(|&c| y_db.has(c, i)))
        .collect())
}

/// Ranks the database by Hamming distance to `query` using a counting sort,
/// which is stable and therefore keeps ties in index order.
pub fn rank(query_id: usize, query: &[u64], db: &PackedCodes) -> Result<Ranking> {
    if query.len() != db.words_per_code() {
        return Err(Error::LengthMismatch {
            left: query.len() * crate::codec::WORD_BITS,
            right: db.bits(),
        });
    }
    let dist: Vec<u32> = db.iter().map(|c| hamming_words(query, c)).collect();
    let max = db.words_per_code() * crate::codec::WORD_BITS;
    let mut start = vec![0usize; max + 2];
    for &d in &dist {
        start[d as usize + 1] += 1;
    }
    for i in 1..start.len() {
        start[i] += start[i - 1];
    }
    let mut order = vec![0usize; dist.len()];
    for (i, &d) in dist.iter().enumerate() {
        let slot = &mut start[d as usize];
        order[*slot] = i;
        *slot += 1;
    }
    let distances = order.iter().map(|&i| dist[i]).collect();
    Ok(Ranking {
        query: query_id,
        order,
        distances,
    })
}

/// `(1/R) sum over relevant positions p of (hits up to p) / p`.
pub fn average_precision(ranking: &Ranking, rel: &[bool]) -> Result<f64> {
    let total = rel.iter().filter(|&&r| r).count();
    if total == 0 {
        return Err(Error::NoRelevantItems);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, &item) in ranking.order.iter().enumerate() {
        if rel[item] {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
            if hits == total {
                break;
            }
        }
    }
    Ok(sum / total as f64)
}

fn check_pair(queries: &PackedCodes, db: &PackedCodes, y_query: &LabelMatrix, y_db: &LabelMatrix) -> Result<()> {
    if queries.bits() != db.bits() {
        return Err(Error::LengthMismatch {
            left: queries.bits(),
            right: db.bits(),
        });
    }
    if y_query.samples() != queries.len() || y_db.samples() != db.len() {
        return Err(Error::DimensionMismatch {
            symbol: "label columns".into(),
            expected: format!("{} queries / {} database items", queries.len(), db.len()),
            actual: format!("{} / {}", y_query.samples(), y_db.samples()),
        });
    }
    Ok(())
}

/// Ranking and relevance for every query with at least one relevant item.
fn scored_queries(
    queries: &PackedCodes,
    db: &PackedCodes,
    y_query: &LabelMatrix,
    y_db: &LabelMatrix,
) -> Result<(Vec<(Ranking, Vec<bool>)>, usize)> {
    check_pair(queries, db, y_query, y_db)?;
    let per_query: Vec<Option<(Ranking, Vec<bool>)>> = (0..queries.len())
        .into_par_iter()
        .map(|q| -> Result<_> {
            let rel = relevance(y_query, q, y_db)?;
            if !rel.iter().any(|&r| r) {
                return Ok(None);
            }
            Ok(Some((rank(q, queries.code(q), db)?, rel)))
        })
        .collect::<Result<_>>()?;
    let skipped = per_query.iter().filter(|p| p.is_none()).count();
    if skipped > 0 {
        log::warn!("{skipped} queries have no relevant database items and are excluded");
    }
    let scored: Vec<_> = per_query.into_iter().flatten().collect();
    if scored.is_empty() {
        return Err(Error::NoValidQueries);
    }
    Ok((scored, skipped))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanAp {
    pub value: f64,
    pub scored_queries: usize,
    pub skipped_queries: usize,
}

/// Mean average precision over queries with at least one relevant item.
pub fn mean_ap(queries: &PackedCodes, db: &PackedCodes, y_query: &LabelMatrix, y_db: &LabelMatrix) -> Result<MeanAp> {
    let (scored, skipped) = scored_queries(queries, db, y_query, y_db)?;
    let aps: Vec<f64> = scored
        .par_iter()
        .map(|(ranking, rel)| average_precision(ranking, rel))
        .collect::<Result<_>>()?;
    Ok(MeanAp {
        value: aps.iter().sum::<f64>() / aps.len() as f64,
        scored_queries: aps.len(),
        skipped_queries: skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// `(recall, precision)` at every rank cutoff 1..=N, pooled over queries.
    pub raw: Vec<(f64, f64)>,
    /// Maximum precision at recall >= each of 0.00, 0.01, ..., 1.00.
    pub interpolated: Vec<(f64, f64)>,
}

/// Pooled precision-recall curve: at cutoff `c`, precision is total hits over
/// `Q c` and recall is total hits over the total number of relevant items.
pub fn pr_curve(queries: &PackedCodes, db: &PackedCodes, y_query: &LabelMatrix, y_db: &LabelMatrix) -> Result<PrCurve> {
    let (scored, _) = scored_queries(queries, db, y_query, y_db)?;
    let n = db.len();
    let q = scored.len() as f64;
    let mut hits_at = vec![0u64; n];
    let mut relevant_total = 0u64;
    for (ranking, rel) in &scored {
        relevant_total += rel.iter().filter(|&&r| r).count() as u64;
        let mut hits = 0u64;
        for (pos, &item) in ranking.order.iter().enumerate() {
            hits += rel[item] as u64;
            hits_at[pos] += hits;
        }
    }
    let raw: Vec<(f64, f64)> = hits_at
        .iter()
        .enumerate()
        .map(|(pos, &h)| (h as f64 / relevant_total as f64, h as f64 / (q * (pos + 1) as f64)))
        .collect();
    Ok(PrCurve {
        interpolated: interpolate(&raw),
        raw,
    })
}

fn interpolate(raw: &[(f64, f64)]) -> Vec<(f64, f64)> {
    // Running maximum of precision from the right.
    let mut best_right = vec![0.0f64; raw.len() + 1];
    for i in (0..raw.len()).rev() {
        best_right[i] = best_right[i + 1].max(raw[i].1);
    }
    (0..PR_POINTS)
        .map(|step| {
            let level = step as f64 / (PR_POINTS - 1) as f64;
            let first = raw.partition_point(|&(r, _)| r < level - 1e-12);
            (level, best_right[first])
        })
        .collect()
}

/// Retrieval direction: image queries against text database or vice versa.
/// Modality 1 is text, modality 2 image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Img2Txt,
    Txt2Img,
}

impl Task {
    pub const BOTH: [Task; 2] = [Task::Img2Txt, Task::Txt2Img];

    pub fn query_modality(self) -> Modality {
        match self {
            Task::Img2Txt => Modality::Second,
            Task::Txt2Img => Modality::First,
        }
    }

    pub fn database_modality(self) -> Modality {
        match self {
            Task::Img2Txt => Modality::First,
            Task::Txt2Img => Modality::Second,
        }
    }
}

/// Where database codes come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DbSource {
    /// The codes `B^k` learned for the training set.
    Learned,
    /// Database features passed through the out-of-sample encoder.
    Reencoded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthResult {
    pub bits: usize,
    pub map: f64,
    pub pr_curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: Task,
    pub results: Vec<LengthResult>,
    pub scored_queries: usize,
    pub skipped_queries: usize,
    pub seconds: f64,
}

impl TaskReport {
    pub fn map_for(&self, bits: usize) -> Option<f64> {
        self.results.iter().find(|r| r.bits == bits).map(|r| r.map)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub db_source: DbSource,
    pub queries: usize,
    pub database: usize,
    pub tasks: Vec<TaskReport>,
}

impl EvalReport {
    pub fn task(&self, task: Task) -> Option<&TaskReport> {
        self.tasks.iter().find(|t| t.task == task)
    }

    /// Tab-separated `recall precision` rows of one interpolated curve.
    pub fn pr_table(&self, task: Task, bits: usize) -> Option<String> {
        let result = self.task(task)?.results.iter().find(|r| r.bits == bits)?;
        let mut out = String::from("recall\tprecision\n");
        for (recall, precision) in &result.pr_curve {
            out.push_str(&format!("{recall:.2}\t{precision:.6}\n"));
        }
        Some(out)
    }
}

/// Database side of a cross-modal evaluation.
pub enum Database<'a> {
    /// Learned codes per length (in the encoder's length order).
    Learned(&'a [PackedCodes]),
    /// Raw database features for both modalities.
    Features([&'a FeatureMatrix; 2]),
}

/// Runs both retrieval tasks for every code length of `encoder`.
pub fn evaluate(
    encoder: &Encoder,
    query_features: [&FeatureMatrix; 2],
    y_query: &LabelMatrix,
    database: Database<'_>,
    y_db: &LabelMatrix,
) -> Result<EvalReport> {
    let lengths = encoder.code_lengths();
    let db_source = match database {
        Database::Learned(codes) => {
            if codes.len() != lengths.len() {
                return Err(Error::DimensionMismatch {
                    symbol: "learned code sets".into(),
                    expected: lengths.len().to_string(),
                    actual: codes.len().to_string(),
                });
            }
            DbSource::Learned
        }
        Database::Features(_) => DbSource::Reencoded,
    };
    let mut tasks = Vec::with_capacity(2);
    for task in Task::BOTH {
        let started = Instant::now();
        let mut results = Vec::with_capacity(lengths.len());
        let mut counts = (0, 0);
        for (k, &bits) in lengths.iter().enumerate() {
            let queries = crate::codec::pack(&encoder.encode(
                task.query_modality(),
                query_features[task.query_modality().slot()],
                k,
            )?)?;
            let reencoded;
            let db_codes = match &database {
                Database::Learned(codes) => &codes[k],
                Database::Features(x) => {
                    let t = task.database_modality();
                    reencoded = crate::codec::pack(&encoder.encode(t, x[t.slot()], k)?)?;
                    &reencoded
                }
            };
            let map = mean_ap(&queries, db_codes, y_query, y_db)?;
            let pr = pr_curve(&queries, db_codes, y_query, y_db)?;
            counts = (map.scored_queries, map.skipped_queries);
            results.push(LengthResult {
                bits,
                map: map.value,
                pr_curve: pr.interpolated,
            });
        }
        tasks.push(TaskReport {
            task,
            results,
            scored_queries: counts.0,
            skipped_queries: counts.1,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(EvalReport {
        protocol: PROTOCOL.to_string(),
        db_source,
        queries: y_query.samples(),
        database: y_db.samples(),
        tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::pack;
    use nalgebra::DMatrix;

    fn labels(c: usize, cols: &[&[usize]]) -> LabelMatrix {
        let mut y = DMatrix::zeros(c, cols.len());
        for (i, active) in cols.iter().enumerate() {
            for &a in active.iter() {
                y[(a, i)] = 1.0;
            }
        }
        LabelMatrix::new(y).unwrap()
    }

    fn ranking(order: Vec<usize>) -> Ranking {
        let distances = vec![0; order.len()];
        Ranking {
            query: 0,
            order,
            distances,
        }
    }

    #[test]
    fn relevance_by_label_overlap() {
        let q = labels(4, &[&[1, 3], &[]]);
        let db = labels(4, &[&[3], &[0, 2], &[1]]);
        assert_eq!(relevance(&q, 0, &db).unwrap(), vec![true, false, true]);
        assert_eq!(relevance(&q, 1, &db).unwrap(), vec![false, false, false]);
        let other = labels(3, &[&[0]]);
        assert!(relevance(&q, 0, &other).is_err());
    }

    #[test]
    fn ranking_order_and_ties() {
        let q = DMatrix::from_column_slice(4, 1, &[1.0, -1.0, 1.0, 1.0]);
        let db = DMatrix::from_column_slice(4, 2, &[1.0, -1.0, 1.0, 1.0, -1.0, 1.0, -1.0, -1.0]);
        let qp = pack(&q).unwrap();
        let dbp = pack(&db).unwrap();
        let r = rank(0, qp.code(0), &dbp).unwrap();
        assert_eq!(r.order, vec![0, 1]);
        assert_eq!(r.distances, vec![0, 4]);

        let db = DMatrix::from_column_slice(2, 3, &[1.0, -1.0, -1.0, -1.0, -1.0, 1.0]);
        let q = pack(&DMatrix::from_column_slice(2, 1, &[1.0, 1.0])).unwrap();
        let r = rank(0, q.code(0), &pack(&db).unwrap()).unwrap();
        assert_eq!(r.order, vec![0, 2, 1]);

        let wide = pack(&DMatrix::from_element(70, 1, 1.0)).unwrap();
        assert!(matches!(
            rank(0, wide.code(0), &pack(&db).unwrap()),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn average_precision_examples() {
        assert_eq!(
            average_precision(&ranking(vec![0, 1, 2]), &[true, false, false]).unwrap(),
            1.0
        );
        let ap = average_precision(&ranking(vec![0, 1, 2]), &[true, false, true]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&ranking(vec![2, 0, 1]), &[true; 3]).unwrap(), 1.0);
        assert!(matches!(
            average_precision(&ranking(vec![0]), &[false]),
            Err(Error::NoRelevantItems)
        ));
    }

    #[test]
    fn ap_ignores_irrelevant_tail_order() {
        let rel = [true, false, true, false, false];
        let a = average_precision(&ranking(vec![0, 1, 2, 3, 4]), &rel).unwrap();
        let b = average_precision(&ranking(vec![0, 1, 2, 4, 3]), &rel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_of_two_queries() {
        // Query 0 ranks its only relevant item first (AP 1); query 1 ranks
        // its only relevant item second (AP 0.5).
        let db = pack(&DMatrix::from_column_slice(2, 2, &[1.0, 1.0, -1.0, -1.0])).unwrap();
        let q = pack(&DMatrix::from_column_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])).unwrap();
        let yq = labels(2, &[&[0], &[1]]);
        let ydb = labels(2, &[&[0], &[1]]);
        let map = mean_ap(&q, &db, &yq, &ydb).unwrap();
        assert_eq!(map.value, 0.75);
        assert_eq!(map.scored_queries, 2);
    }

    #[test]
    fn unlabeled_queries_are_skipped() {
        let db = pack(&DMatrix::from_column_slice(1, 2, &[1.0, -1.0])).unwrap();
        let q = pack(&DMatrix::from_column_slice(1, 2, &[1.0, 1.0])).unwrap();
        let yq = labels(2, &[&[0], &[]]);
        let ydb = labels(2, &[&[0], &[1]]);
        let map = mean_ap(&q, &db, &yq, &ydb).unwrap();
        assert_eq!(map.skipped_queries, 1);
        assert_eq!(map.value, 1.0);
        let yq = labels(2, &[&[], &[]]);
        assert!(matches!(mean_ap(&q, &db, &yq, &ydb), Err(Error::NoValidQueries)));
    }

    #[test]
    fn perfect_and_reversed_pr_curves() {
        // 2 positives out of 5, query equals positives' codes.
        let db = pack(&DMatrix::from_column_slice(
            2,
            5,
            &[1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0],
        ))
        .unwrap();
        let q = pack(&DMatrix::from_column_slice(2, 1, &[1.0, 1.0])).unwrap();
        let ydb = labels(2, &[&[0], &[0], &[1], &[1], &[1]]);
        let perfect = pr_curve(&q, &db, &labels(2, &[&[0]]), &ydb).unwrap();
        assert_eq!(perfect.interpolated.len(), PR_POINTS);
        assert!(perfect.interpolated.iter().all(|&(_, p)| p == 1.0));

        let reversed = pr_curve(&q, &db, &labels(2, &[&[1]]), &ydb).unwrap();
        assert_eq!(*reversed.raw.last().unwrap(), (1.0, 3.0 / 5.0));
        let mut prev = f64::INFINITY;
        for &(_, p) in &reversed.interpolated {
            assert!(p <= prev);
            prev = p;
        }
    }
}
