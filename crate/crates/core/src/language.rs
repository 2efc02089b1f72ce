//! Pluggable language identification.

use std::collections::{HashMap, HashSet};

pub trait LanguageIdentifier: Send + Sync {
    /// Best-guess language tag and a confidence in `[0, 1]`.
    fn identify(&self, text: &str) -> (String, f64);
}

const PROFILES: &[(&str, &str)] = &[
    ("en", "the and of to is in that it for with as was on are be this by you your or from at which have has an they their can will more also these there about when what than a per so not but if how all one some may we our do been into only very"),
    ("de", "der die das und ist nicht ein eine zu mit sich den dem des auch auf für von sie es wir ich bei oder wird sind werden noch nach wie über"),
    ("fr", "le la les et est des une un du pour dans que qui sur avec pas ce sont vous nous il elle au aux ou plus mais être"),
    ("es", "el la los las y es en que de del un una para con por se su sus como más pero muy está son al lo"),
    ("it", "il lo la gli le e è di che un una per con non sono della del nel anche come più ma si questo"),
    ("nl", "de het een en is van in dat op te zijn met voor niet ook aan er maar bij wordt worden nog dit"),
    ("pt", "o a os as e é de do da que um uma para com não em no na se por mais mas como são"),
];

/// Stopword-profile identifier.
///
/// Words shared by two or more profiles are discarded, so every hit is
/// unambiguous. Confidence is the winning language's share of all hits.
#[derive(Debug, Clone)]
pub struct StopwordIdentifier {
    lookup: HashMap<String, &'static str>,
    /// Minimum number of profile hits before any language is reported.
    pub min_hits: usize,
}

impl Default for StopwordIdentifier {
    fn default() -> Self {
        let mut seen: HashMap<&str, HashSet<&'static str>> = HashMap::new();
        for (lang, words) in PROFILES {
            for w in words.split_whitespace() {
                seen.entry(w).or_default().insert(lang);
            }
        }
        let lookup = seen
            .into_iter()
            .filter(|(_, langs)| langs.len() == 1)
            .map(|(w, langs)| (w.to_string(), *langs.iter().next().unwrap()))
            .collect();
        Self { lookup, min_hits: 2 }
    }
}

impl LanguageIdentifier for StopwordIdentifier {
    fn identify(&self, text: &str) -> (String, f64) {
        let mut hits: HashMap<&str, usize> = HashMap::new();
        let lowered = text.to_lowercase();
        for token in lowered.split(|c: char| !c.is_alphanumeric()) {
            if let Some(lang) = self.lookup.get(token) {
                *hits.entry(lang).or_default() += 1;
            }
        }
        let total: usize = hits.values().sum();
        if total < self.min_hits {
            return ("und".to_string(), 0.0);
        }
        let (lang, best) = hits
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)))
            .unwrap();
        (lang.to_string(), best as f64 / total as f64)
    }
}

/// Identifier that always reports the same tag; useful for fixtures.
#[derive(Debug, Clone)]
pub struct FixedLanguage(pub String);

impl LanguageIdentifier for FixedLanguage {
    fn identify(&self, _text: &str) -> (String, f64) {
        (self.0.clone(), 1.0)
    }
}
