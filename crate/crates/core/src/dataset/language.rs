use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::ObjectCatalog;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LanguageStats {
    /// Token count -> number of expressions with that many tokens.
    pub lengths: BTreeMap<usize, usize>,
    /// Words by descending frequency, ties broken alphabetically.
    pub ranks: Vec<(String, usize)>,
}

impl LanguageStats {
    pub fn modal_length(&self) -> Option<usize> {
        // first maximum in ascending length order
        self.lengths.iter().fold(None, |best: Option<(usize, usize)>, (&len, &n)| match best {
            Some((_, m)) if m >= n => best,
            _ => Some((len, n)),
        })
        .map(|(len, _)| len)
    }

    pub fn lengths_csv(&self) -> String {
        let mut s = String::from("length,count\n");
        for (len, n) in &self.lengths {
            s.push_str(&format!("{len},{n}\n"));
        }
        s
    }

    pub fn ranks_csv(&self) -> String {
        let mut s = String::from("rank,word,count\n");
        for (i, (w, n)) in self.ranks.iter().enumerate() {
            s.push_str(&format!("{},{w},{n}\n", i + 1));
        }
        s
    }
}

/// Lowercased whitespace tokens.
pub fn tokenize(expression: &str) -> Vec<String> {
    expression.split_whitespace().map(str::to_lowercase).collect()
}

pub fn language_stats(catalog: &ObjectCatalog) -> LanguageStats {
    let mut lengths = BTreeMap::new();
    let mut freq: HashMap<String, usize> = HashMap::new();
    for expr in catalog.objects().iter().flat_map(|o| &o.expressions) {
        let tokens = tokenize(expr);
        *lengths.entry(tokens.len()).or_insert(0) += 1;
        for t in tokens {
            *freq.entry(t).or_insert(0) += 1;
        }
    }
    let mut ranks: Vec<(String, usize)> = freq.into_iter().collect();
    ranks.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    LanguageStats { lengths, ranks }
}
