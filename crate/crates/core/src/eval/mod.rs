//! Candidate pools, P@K / DCG@K and evaluation reports.

mod metrics;
mod pool;

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{dcg_at_k, dcg_hit, precision_at_k, precision_hit, rank_of, MetricSummary};
pub use pool::{build_pools, Candidate, CandidatePool, PoolReport, QueryBooster};

use crate::error::Result;
use crate::labeling::question_seed;
use crate::ranker::{rank_candidates, sort_scored, Ranker, ScoreWeights};
use crate::retrieval::{TokenId, Vocabulary};

/// Orders the answers of a pool, best first.
pub trait Scorer: Sync {
    fn rank(&self, pool: &CandidatePool) -> Result<Vec<(u64, f64)>>;
}

/// Ranks the accepted answer first.
pub struct OracleScorer;

/// Ranks the accepted answer last.
pub struct AntiOracleScorer;

/// Independent uniform scores, seeded per question.
pub struct RandomScorer {
    pub seed: u64,
}

fn fixed_scores(pool: &CandidatePool, accepted: f64) -> Vec<(u64, f64)> {
    let target = pool.accepted_aid();
    let mut v: Vec<(u64, f64)> = pool
        .candidates
        .iter()
        .map(|c| (c.aid, if c.aid == target { accepted } else { 0.0 }))
        .collect();
    sort_scored(&mut v);
    v
}

impl Scorer for OracleScorer {
    fn rank(&self, pool: &CandidatePool) -> Result<Vec<(u64, f64)>> {
        Ok(fixed_scores(pool, f64::INFINITY))
    }
}

impl Scorer for AntiOracleScorer {
    fn rank(&self, pool: &CandidatePool) -> Result<Vec<(u64, f64)>> {
        Ok(fixed_scores(pool, f64::NEG_INFINITY))
    }
}

impl Scorer for RandomScorer {
    fn rank(&self, pool: &CandidatePool) -> Result<Vec<(u64, f64)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(question_seed(self.seed, pool.qid));
        let mut v: Vec<(u64, f64)> = pool.candidates.iter().map(|c| (c.aid, rng.random::<f64>())).collect();
        sort_scored(&mut v);
        Ok(v)
    }
}

/// Scores pools with the matching model over their joined questions.
pub struct RankerScorer<'a> {
    pub model: &'a Ranker<f32>,
    pub weights: ScoreWeights,
    pub vocab: &'a Vocabulary,
    /// Encoded answer bodies by answer id.
    pub answers: &'a HashMap<u64, Vec<TokenId>>,
}

impl Scorer for RankerScorer<'_> {
    fn rank(&self, pool: &CandidatePool) -> Result<Vec<(u64, f64)>> {
        let q = self.vocab.encode(&pool.boosted.joined);
        let cands: Vec<(u64, Vec<TokenId>)> = pool
            .candidates
            .iter()
            .map(|c| (c.aid, self.answers.get(&c.aid).cloned().unwrap_or_default()))
            .collect();
        rank_candidates(self.model, &q, &cands, &self.weights)
    }
}

pub const REPORTED_PRECISION: [usize; 4] = [1, 2, 3, 4];
pub const REPORTED_DCG: [usize; 4] = [2, 3, 4, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMetric {
    pub k: usize,
    #[serde(flatten)]
    pub summary: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_questions: usize,
    pub precision: Vec<KMetric>,
    pub dcg: Vec<KMetric>,
    /// How the ± column is computed.
    pub spread: String,
    pub config: serde_json::Value,
}

/// 1-based rank of each pool's accepted answer under `scorer`.
pub fn accepted_ranks<S: Scorer + ?Sized>(pools: &[CandidatePool], scorer: &S) -> Result<Vec<usize>> {
    pools
        .par_iter()
        .map(|p| {
            let ranked: Vec<u64> = scorer.rank(p)?.into_iter().map(|(id, _)| id).collect();
            Ok(rank_of(&ranked, p.accepted_aid()).expect("scorer dropped the accepted answer"))
        })
        .collect()
}

pub fn report_from_ranks(ranks: &[usize], config: serde_json::Value) -> EvalReport {
    let metric = |k, f: fn(&[usize], usize) -> MetricSummary| KMetric { k, summary: f(ranks, k) };
    EvalReport {
        n_questions: ranks.len(),
        precision: REPORTED_PRECISION.iter().map(|&k| metric(k, precision_at_k)).collect(),
        dcg: REPORTED_DCG.iter().map(|&k| metric(k, dcg_at_k)).collect(),
        spread: "sample standard deviation over questions".into(),
        config,
    }
}

pub fn evaluate<S: Scorer + ?Sized>(pools: &[CandidatePool], scorer: &S, config: serde_json::Value) -> Result<EvalReport> {
    Ok(report_from_ranks(&accepted_ranks(pools, scorer)?, config))
}

fn cell(s: &MetricSummary) -> String {
    match (s.mean, s.sd) {
        (Some(m), Some(sd)) => format!("{:.3}±{:.3}", m, sd),
        (Some(m), None) => format!("{:.3}", m),
        _ => "n/a".into(),
    }
}

impl EvalReport {
    pub fn precision_mean(&self, k: usize) -> Option<f64> {
        self.precision.iter().find(|m| m.k == k).and_then(|m| m.summary.mean)
    }

    pub fn table(&self) -> String {
        let header: Vec<String> = self
            .precision
            .iter()
            .map(|m| format!("P@{}", m.k))
            .chain(self.dcg.iter().map(|m| format!("DCG@{}", m.k)))
            .collect();
        let cells: Vec<String> = self.precision.iter().chain(&self.dcg).map(|m| cell(&m.summary)).collect();
        let width = cells.iter().chain(&header).map(|c| c.chars().count()).max().unwrap_or(0);
        let mut out = String::new();
        for row in [&header, &cells] {
            let line: Vec<String> = row.iter().map(|c| format!("{c:>width$}")).collect();
            let _ = writeln!(out, "{}", line.join("  "));
        }
        let _ = writeln!(out, "n = {} questions; ± is the {}", self.n_questions, self.spread);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub n_questions: usize,
    /// Mean P@1..P@5.
    pub precision: Vec<Option<f64>>,
}

pub fn sweep_row(k: usize, ranks: &[usize]) -> SweepRow {
    SweepRow {
        k,
        n_questions: ranks.len(),
        precision: (1..=5).map(|kk| precision_at_k(ranks, kk).mean).collect(),
    }
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("   k      n    P@1    P@2    P@3    P@4    P@5\n");
    for r in rows {
        let _ = write!(out, "{:>4} {:>6}", r.k, r.n_questions);
        for p in &r.precision {
            match p {
                Some(v) => {
                    let _ = write!(out, " {v:>6.3}");
                }
                None => out.push_str("    n/a"),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::text::tokenize;
    use crate::corpus::{Answer, Corpus, Post, Timestamp};
    use crate::qboost::BoostedQuestion;
    use crate::retrieval::{cosine, EmbeddingMatrix, IndexedTitle, RetrievalIndex};

    fn pool(qid: u64, aids: &[u64], accepted: usize) -> CandidatePool {
        CandidatePool {
            qid,
            boosted: BoostedQuestion {
                original: vec![],
                cq: vec![],
                joined: vec![],
            },
            candidates: aids.iter().map(|&aid| Candidate { aid, qid: aid }).collect(),
            accepted,
        }
    }

    /// Ranks candidates in a fixed given order.
    struct Fixed(Vec<u64>);

    impl Scorer for Fixed {
        fn rank(&self, _: &CandidatePool) -> Result<Vec<(u64, f64)>> {
            Ok(self.0.iter().enumerate().map(|(i, &id)| (id, -(i as f64))).collect())
        }
    }

    fn permutations(v: &[u64]) -> Vec<Vec<u64>> {
        if v.len() <= 1 {
            return vec![v.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..v.len() {
            let mut rest = v.to_vec();
            let x = rest.remove(i);
            for mut p in permutations(&rest) {
                p.insert(0, x);
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn all_permutations_match_enumeration() {
        let p = pool(1, &[10, 11, 12, 13, 14], 2);
        let perms = permutations(&[10, 11, 12, 13, 14]);
        assert_eq!(perms.len(), 120);
        let mut sum_p = [0.0f64; 5];
        let mut sum_d = [0.0f64; 5];
        for perm in &perms {
            let report = evaluate(std::slice::from_ref(&p), &Fixed(perm.clone()), serde_json::Value::Null).unwrap();
            let pos = perm.iter().position(|&a| a == 12).unwrap() + 1;
            for k in 1..=5 {
                let want_p = if pos <= k { 1.0 } else { 0.0 };
                let want_d = if pos <= k { 1.0 / ((pos + 1) as f64).log2() } else { 0.0 };
                let ranks = accepted_ranks(std::slice::from_ref(&p), &Fixed(perm.clone())).unwrap();
                assert_eq!(precision_at_k(&ranks, k).mean, Some(want_p));
                assert_eq!(dcg_at_k(&ranks, k).mean, Some(want_d));
                sum_p[k - 1] += want_p;
                sum_d[k - 1] += want_d;
            }
            assert_eq!(report.precision_mean(1), Some(if pos == 1 { 1.0 } else { 0.0 }));
        }
        // aggregate over the 120 orderings equals the pooled report
        let pools: Vec<CandidatePool> = (0..120).map(|i| pool(i, &[10, 11, 12, 13, 14], 2)).collect();
        struct ByQuestion(Vec<Vec<u64>>);
        impl Scorer for ByQuestion {
            fn rank(&self, p: &CandidatePool) -> Result<Vec<(u64, f64)>> {
                Fixed(self.0[p.qid as usize].clone()).rank(p)
            }
        }
        let ranks = accepted_ranks(&pools, &ByQuestion(perms)).unwrap();
        for k in 1..=5 {
            assert!((precision_at_k(&ranks, k).mean.unwrap() - sum_p[k - 1] / 120.0).abs() < 1e-12);
            assert!((dcg_at_k(&ranks, k).mean.unwrap() - sum_d[k - 1] / 120.0).abs() < 1e-12);
        }
        assert_eq!(precision_at_k(&ranks, 1).mean, Some(0.2));
        assert_eq!(precision_at_k(&ranks, 5).mean, Some(1.0));
    }

    #[test]
    fn oracle_and_anti_oracle() {
        let pools: Vec<CandidatePool> = (0..30).map(|i| pool(i, &[1, 2, 3, 4, 5], (i % 5) as usize)).collect();
        let best = evaluate(&pools, &OracleScorer, serde_json::Value::Null).unwrap();
        assert!(best.precision.iter().chain(&best.dcg).all(|m| m.summary.mean == Some(1.0)));
        let worst = evaluate(&pools, &AntiOracleScorer, serde_json::Value::Null).unwrap();
        assert!(worst.precision.iter().all(|m| m.summary.mean == Some(0.0)));
        let d5 = worst.dcg.iter().find(|m| m.k == 5).unwrap().summary.mean.unwrap();
        assert!((d5 - 1.0 / 6f64.log2()).abs() < 1e-15);
    }

    #[test]
    fn random_scorer_baseline() {
        let pools: Vec<CandidatePool> = (0..1000).map(|i| pool(i, &[1, 2, 3, 4, 5], 0)).collect();
        let r = evaluate(&pools, &RandomScorer { seed: 3 }, serde_json::Value::Null).unwrap();
        let p1 = r.precision_mean(1).unwrap();
        assert!((p1 - 0.2).abs() <= 0.05, "{p1}");
        let again = evaluate(&pools, &RandomScorer { seed: 3 }, serde_json::Value::Null).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn report_table_layout() {
        let ranks = [1, 2, 3, 1];
        let r = report_from_ranks(&ranks, serde_json::json!({"k": 5}));
        let t = r.table();
        let header: Vec<&str> = t.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(header, ["P@1", "P@2", "P@3", "P@4", "DCG@2", "DCG@3", "DCG@4", "DCG@5"]);
        assert!(t.contains("0.500±0.577"));
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["precision"][0]["k"], 1);
        assert_eq!(json["precision"][0]["mean"], 0.5);
        let empty = report_from_ranks(&[], serde_json::Value::Null);
        assert!(empty.table().contains("n/a"));
        let rows = [sweep_row(5, &ranks), sweep_row(6, &[2, 2])];
        assert_eq!(sweep_table(&rows).lines().count(), 3);
    }

    fn ts() -> Timestamp {
        Timestamp::parse("2021-03-01T00:00:00.000").unwrap()
    }

    fn mk_post(id: u64, title: String, accepted: Option<u64>) -> Post {
        Post {
            id,
            title,
            body: String::new(),
            tags: vec![],
            created_at: ts(),
            accepted_answer_id: accepted,
            author_id: None,
        }
    }

    fn mk_answer(id: u64, parent: u64, accepted: bool) -> Answer {
        Answer {
            id,
            parent_id: parent,
            body: format!("answer {id}"),
            created_at: ts(),
            author_id: None,
            is_accepted: accepted,
        }
    }

    fn index_for(posts: &[Post], seed: u64) -> RetrievalIndex {
        let titles: Vec<IndexedTitle> = posts
            .iter()
            .map(|p| IndexedTitle {
                id: p.id,
                tokens: tokenize(&p.title),
            })
            .collect();
        let vocab = crate::retrieval::Vocabulary::build(titles.iter().map(|t| t.tokens.clone()), 100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 6;
        let data: Vec<f32> = (0..vocab.len() * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let emb = EmbeddingMatrix::from_vec(vocab.len(), dim, data).unwrap();
        RetrievalIndex::build(vocab, emb, titles).unwrap()
    }

    #[test]
    fn pools_match_brute_force_ranking() {
        let words = ["disk", "wifi", "boot", "sound", "grub", "driver", "kernel", "update"];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut posts = Vec::new();
        let mut answers = Vec::new();
        for i in 0..20u64 {
            let title: Vec<&str> = (0..3).map(|_| words[rng.random_range(0..words.len())]).collect();
            // every third post has answers but none accepted
            let acc = i % 3 != 0;
            posts.push(mk_post(i + 1, title.join(" "), acc.then_some(100 + 2 * i)));
            answers.push(mk_answer(100 + 2 * i, i + 1, acc));
            answers.push(mk_answer(99 + 2 * i, i + 1, false));
        }
        let index = index_for(&posts, 4);
        let corpus = Corpus::new(posts.clone(), answers, vec![]);
        let qs: Vec<&Post> = corpus.posts.iter().collect();
        let booster = |p: &Post| BoostedQuestion {
            original: tokenize(&p.title),
            cq: vec![],
            joined: tokenize(&p.title),
        };
        let (pools, report) = build_pools(&qs, &corpus, &index, &booster, 5);
        assert_eq!(report.skipped_no_accepted, 7);
        for pool in &pools {
            let me = corpus.post(pool.qid).unwrap();
            let qv = index.embed(&tokenize(&me.title));
            let mut others: Vec<(u64, f64)> = posts
                .iter()
                .filter(|p| p.id != me.id)
                .map(|p| (p.id, cosine(&qv, &index.embed(&tokenize(&p.title)))))
                .collect();
            others.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut want = vec![me.id];
            want.extend(others.iter().take(4).map(|o| o.0));
            let got: Vec<u64> = pool.candidates.iter().map(|c| c.qid).collect();
            // cosine ties at the boundary may legitimately reorder equal scores
            assert_eq!(got.len(), 5);
            assert_eq!(got[0], me.id);
            let got_scores: Vec<f64> = got[1..].iter().map(|id| others.iter().find(|o| o.0 == *id).unwrap().1).collect();
            let want_scores: Vec<f64> = others.iter().take(4).map(|o| o.1).collect();
            for (g, w) in got_scores.iter().zip(&want_scores) {
                assert!((g - w).abs() < 1e-9);
            }
            assert_eq!(pool.accepted_aid(), me.accepted_answer_id.unwrap());
            for c in &pool.candidates {
                let p = corpus.post(c.qid).unwrap();
                assert_eq!(corpus.representative_answer(p).unwrap().id, c.aid);
            }
        }
    }

    #[test]
    fn duplicate_answer_ids_are_skipped() {
        // posts 1 and 2 both surface answer id 50; the pool pulls post 3 instead
        let posts = vec![
            mk_post(1, "alpha beta".into(), Some(40)),
            mk_post(2, "alpha beta gamma".into(), None),
            mk_post(3, "alpha delta".into(), None),
            mk_post(4, "omega".into(), None),
        ];
        let answers = vec![mk_answer(40, 1, true), mk_answer(50, 2, false), mk_answer(50, 3, false), mk_answer(60, 3, false), mk_answer(70, 4, false)];
        let corpus = Corpus::new(posts.clone(), answers, vec![]);
        let index = index_for(&posts, 1);
        let booster = |p: &Post| BoostedQuestion {
            original: tokenize(&p.title),
            cq: vec![],
            joined: tokenize(&p.title),
        };
        let (pools, _) = build_pools(&[corpus.post(1).unwrap()], &corpus, &index, &booster, 3);
        let aids: Vec<u64> = pools[0].candidates.iter().map(|c| c.aid).collect();
        assert_eq!(aids[0], 40);
        let mut sorted = aids.clone();
        sorted.sort();
        assert_eq!(sorted, [40, 50, 70]);
    }

    #[test]
    fn pool_of_one_is_the_accepted_answer() {
        let posts = vec![mk_post(1, "a b".into(), Some(10)), mk_post(2, "a b".into(), Some(20))];
        let corpus = Corpus::new(posts.clone(), vec![mk_answer(10, 1, true), mk_answer(20, 2, true)], vec![]);
        let index = index_for(&posts, 2);
        let booster = |p: &Post| BoostedQuestion {
            original: tokenize(&p.title),
            cq: vec![],
            joined: vec![],
        };
        let qs: Vec<&Post> = corpus.posts.iter().collect();
        let (pools, _) = build_pools(&qs, &corpus, &index, &booster, 1);
        assert!(pools.iter().all(|p| p.candidates.len() == 1 && p.accepted == 0));
        let r = evaluate(&pools, &RandomScorer { seed: 0 }, serde_json::Value::Null).unwrap();
        assert!(r.precision.iter().chain(&r.dcg).all(|m| m.summary.mean == Some(1.0)));
    }
}
