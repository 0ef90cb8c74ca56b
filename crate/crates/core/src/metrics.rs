//! Corpus-level diversity and stability measures.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::catalog::{Level, ObjectCatalog};
use crate::embedding::Sentence;
use crate::error::{Error, Result};
use crate::physics::check_stability;

/// Number of distinct word n-grams across all sentences.
pub fn distinct_n(sentences: &[Sentence], n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let mut seen: HashSet<&[usize]> = HashSet::new();
    for s in sentences {
        for gram in s.windows(n) {
            seen.insert(gram);
        }
    }
    seen.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiversityReport {
    pub n_levels: usize,
    pub distinct_1: usize,
    pub distinct_2: usize,
}

impl DiversityReport {
    pub fn of(sentences: &[Sentence]) -> Self {
        DiversityReport {
            n_levels: sentences.len(),
            distinct_1: distinct_n(sentences, 1),
            distinct_2: distinct_n(sentences, 2),
        }
    }
}

/// Fraction of levels that pass the stability check.
pub fn stability_rate(catalog: &ObjectCatalog, levels: &[Level]) -> Result<f64> {
    if levels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut stable = 0usize;
    for l in levels {
        if check_stability(catalog, l)?.stable {
            stable += 1;
        }
    }
    Ok(stable as f64 / levels.len() as f64)
}

/// `source,levels,distinct_1,distinct_2` rows.
pub fn diversity_csv(rows: &[(&str, DiversityReport)]) -> String {
    let mut out = String::from("source,levels,distinct_1,distinct_2\n");
    for (name, r) in rows {
        let _ = writeln!(out, "{name},{},{},{}", r.n_levels, r.distinct_1, r.distinct_2);
    }
    out
}

/// `source,levels,stable,rate` rows.
pub fn stability_csv(rows: &[(&str, usize, f64)]) -> String {
    let mut out = String::from("source,levels,stable,rate\n");
    for (name, n, rate) in rows {
        let stable = (rate * *n as f64).round() as usize;
        let _ = writeln!(out, "{name},{n},{stable},{rate}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{default_catalog, Category, GameObject};
    use proptest::prelude::*;

    fn oracle(sentences: &[Sentence], n: usize) -> usize {
        let mut seen = Vec::<Vec<usize>>::new();
        for s in sentences {
            if s.len() < n {
                continue;
            }
            for i in 0..=s.len() - n {
                let g = s[i..i + n].to_vec();
                if !seen.contains(&g) {
                    seen.push(g);
                }
            }
        }
        seen.len()
    }

    #[test]
    fn examples() {
        let same = vec![vec![4; 30]];
        assert_eq!(distinct_n(&same, 1), 1);
        assert_eq!(distinct_n(&same, 2), 1);
        let abc = vec![vec![0, 1, 2], vec![1, 2]];
        assert_eq!(distinct_n(&abc, 1), 3);
        assert_eq!(distinct_n(&abc, 2), 2);
        assert_eq!(distinct_n(&[], 1), 0);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            corpus in proptest::collection::vec(proptest::collection::vec(0usize..6, 30), 0..50),
            n in 1usize..3,
        ) {
            prop_assert_eq!(distinct_n(&corpus, n), oracle(&corpus, n));
            let mut rev = corpus.clone();
            rev.reverse();
            prop_assert_eq!(distinct_n(&rev, n), distinct_n(&corpus, n));
            let r = DiversityReport::of(&corpus);
            prop_assert!(r.distinct_2 <= r.distinct_1 * r.distinct_1);
            prop_assert!(r.distinct_2 <= corpus.len() * 29);
        }
    }

    #[test]
    fn stability_rate_counts() {
        let cat = default_catalog();
        let pig = cat.of_category(Category::Pig).next().unwrap();
        let ok = Level::new(vec![GameObject { type_id: pig.type_id, x: 0.0, y: -3.5 + pig.height / 2.0, rotation: 0.0 }], 0);
        let floating = Level::new(vec![GameObject { type_id: pig.type_id, x: 0.0, y: 1.0, rotation: 0.0 }], 0);
        assert_eq!(stability_rate(&cat, &[ok.clone(), ok.clone()]).unwrap(), 1.0);
        assert_eq!(stability_rate(&cat, &[ok, floating]).unwrap(), 0.5);
        assert!(stability_rate(&cat, &[]).is_err());
    }

    #[test]
    fn csv_shapes() {
        let r = DiversityReport { n_levels: 2, distinct_1: 3, distinct_2: 4 };
        assert_eq!(diversity_csv(&[("train", r)]), "source,levels,distinct_1,distinct_2\ntrain,2,3,4\n");
        assert_eq!(stability_csv(&[("gen", 100, 0.9)]), "source,levels,stable,rate\ngen,100,90,0.9\n");
    }
}
