use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{SlotLabel, SlotSpace};

pub const NONE: &str = "none";
const OBJECT: &str = "{object}";
const LOCATION: &str = "{location}";

/// A phrasing for one action. `{object}` and `{location}` are filled from
/// the surface forms; a template without `{object}` must pin its object via
/// `objects`, and a template without `{location}` applies to location `none`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub action: String,
    pub pattern: String,
    /// Objects this phrasing can express; `None` allows every non-`none` object.
    #[serde(default)]
    pub objects: Option<Vec<String>>,
}

impl Template {
    fn new(action: &str, pattern: &str, objects: &[&str]) -> Self {
        Self {
            action: action.into(),
            pattern: pattern.into(),
            objects: Some(objects.iter().map(|s| s.to_string()).collect()),
        }
    }

    fn has_object(&self) -> bool {
        self.pattern.split_whitespace().any(|w| w == OBJECT)
    }

    fn has_location(&self) -> bool {
        self.pattern.split_whitespace().any(|w| w == LOCATION)
    }

    /// Whether this template can express the intent `(action, object, location)`.
    pub fn admits(&self, action: &str, object: &str, location: &str) -> bool {
        if self.action != action {
            return false;
        }
        let allowed = self.objects.as_ref().is_none_or(|os| os.iter().any(|o| o == object));
        let object_ok = if self.has_object() {
            object != NONE && allowed
        } else {
            self.objects.is_some() && allowed
        };
        object_ok && self.has_location() == (location != NONE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrammarConfig {
    pub actions: Vec<String>,
    pub objects: Vec<String>,
    pub locations: Vec<String>,
    pub templates: Vec<Template>,
    /// Surface phrases per object; defaults to the object name.
    #[serde(default)]
    pub object_surfaces: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub location_surfaces: BTreeMap<String, Vec<String>>,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Default for GrammarConfig {
    /// Smart-home command grammar with 6 actions, 14 objects and 4 locations
    /// (including `none`), admitting 31 intents.
    fn default() -> Self {
        let switchable = ["music", "lights", "lamp"];
        let adjustable = ["volume", "heat"];
        let languages = ["chinese", "korean", "english", "german"];
        let items = ["newspaper", "juice", "socks", "shoes"];
        let t = Template::new;
        let templates = vec![
            t("activate", "turn on the {object}", &switchable),
            t("activate", "switch on the {object}", &switchable),
            t("activate", "play the music", &["music"]),
            t("activate", "turn on the {object} in the {location}", &["lights"]),
            t("activate", "switch on the {location} {object}", &["lights"]),
            t("deactivate", "turn off the {object}", &switchable),
            t("deactivate", "turn the {object} off", &switchable),
            t("deactivate", "stop the music", &["music"]),
            t("deactivate", "switch off the {object} in the {location}", &["lights"]),
            t("deactivate", "turn off the {location} {object}", &["lights"]),
            t("increase", "increase the {object}", &adjustable),
            t("increase", "turn the {object} up", &adjustable),
            t("increase", "make it louder", &["volume"]),
            t("increase", "increase the {object} in the {location}", &["heat"]),
            t("increase", "make the {location} warmer", &["heat"]),
            t("decrease", "decrease the {object}", &adjustable),
            t("decrease", "turn the {object} down", &adjustable),
            t("decrease", "make it quieter", &["volume"]),
            t("decrease", "decrease the {object} in the {location}", &["heat"]),
            t("decrease", "make the {location} cooler", &["heat"]),
            t("change_language", "change the language", &[NONE]),
            t("change_language", "switch the language", &[NONE]),
            t("change_language", "change the language to {object}", &languages),
            t("change_language", "set my device to {object}", &languages),
            t("bring", "bring me the {object}", &items),
            t("bring", "get me my {object}", &items),
            t("bring", "fetch the {object}", &items),
        ];
        let surfaces = |pairs: &[(&str, &[&str])]| {
            pairs
                .iter()
                .map(|(k, v)| (k.to_string(), strings(v)))
                .collect::<BTreeMap<_, _>>()
        };
        Self {
            actions: strings(&[
                "activate",
                "deactivate",
                "change_language",
                "increase",
                "decrease",
                "bring",
            ]),
            objects: strings(&[
                NONE,
                "music",
                "lights",
                "volume",
                "heat",
                "lamp",
                "newspaper",
                "juice",
                "socks",
                "shoes",
                "chinese",
                "korean",
                "english",
                "german",
            ]),
            locations: strings(&[NONE, "kitchen", "bedroom", "washroom"]),
            templates,
            object_surfaces: surfaces(&[
                ("lights", &["lights", "light"]),
                ("volume", &["volume", "sound"]),
                ("heat", &["heat", "temperature"]),
                ("newspaper", &["newspaper", "paper"]),
            ]),
            location_surfaces: surfaces(&[("washroom", &["washroom", "bathroom"])]),
        }
    }
}

/// Compiled grammar: label spaces, vocabulary and every phrasing of every
/// valid intent.
#[derive(Debug, Clone)]
pub struct Grammar {
    pub config: GrammarConfig,
    pub vocab: Vec<String>,
    index: HashMap<String, usize>,
    /// Valid intents in label order.
    pub intents: Vec<SlotLabel>,
    /// Token-id phrasings, parallel to `intents`.
    pub phrasings: Vec<Vec<Vec<usize>>>,
}

fn position(list: &[String], name: &str, slot: &str) -> Result<usize> {
    list.iter()
        .position(|x| x == name)
        .ok_or_else(|| Error::Config(format!("unknown {slot} value {name:?}")))
}

impl Grammar {
    pub fn build(config: GrammarConfig) -> Result<Self> {
        for (slot, list) in [
            ("action", &config.actions),
            ("object", &config.objects),
            ("location", &config.locations),
        ] {
            if list.is_empty() {
                return Err(Error::Config(format!("empty {slot} list")));
            }
            let distinct: BTreeSet<_> = list.iter().collect();
            if distinct.len() != list.len() {
                return Err(Error::Config(format!("duplicate {slot} values")));
            }
        }
        for (slot, list) in [("object", &config.objects), ("location", &config.locations)] {
            if !list.iter().any(|x| x == NONE) {
                return Err(Error::Config(format!("{slot} list must include \"none\"")));
            }
        }
        for t in &config.templates {
            position(&config.actions, &t.action, "action")?;
            for o in t.objects.iter().flatten() {
                position(&config.objects, o, "object")?;
            }
        }

        let surface = |map: &BTreeMap<String, Vec<String>>, name: &str| -> Vec<String> {
            map.get(name).cloned().unwrap_or_else(|| vec![name.to_string()])
        };

        let mut by_label: BTreeMap<SlotLabel, Vec<Vec<String>>> = BTreeMap::new();
        for t in &config.templates {
            let a = position(&config.actions, &t.action, "action")?;
            for (o, object) in config.objects.iter().enumerate() {
                for (l, location) in config.locations.iter().enumerate() {
                    if !t.admits(&t.action, object, location) {
                        continue;
                    }
                    let objs = if t.has_object() {
                        surface(&config.object_surfaces, object)
                    } else {
                        vec![String::new()]
                    };
                    let locs = if t.has_location() {
                        surface(&config.location_surfaces, location)
                    } else {
                        vec![String::new()]
                    };
                    for os in &objs {
                        for ls in &locs {
                            let words: Vec<String> = t
                                .pattern
                                .split_whitespace()
                                .flat_map(|w| match w {
                                    OBJECT => os.split_whitespace().map(String::from).collect(),
                                    LOCATION => ls.split_whitespace().map(String::from).collect(),
                                    w => vec![w.to_string()],
                                })
                                .collect();
                            let label = SlotLabel {
                                action: a,
                                object: o,
                                location: l,
                            };
                            by_label.entry(label).or_default().push(words);
                        }
                    }
                }
            }
        }
        if by_label.is_empty() {
            return Err(Error::Config("grammar admits no intents".into()));
        }

        let mut seen: HashMap<Vec<String>, SlotLabel> = HashMap::new();
        for (label, phr) in &by_label {
            for words in phr {
                if let Some(prev) = seen.insert(words.clone(), *label) {
                    if prev != *label {
                        return Err(Error::Config(format!(
                            "phrasing {:?} maps to two intents",
                            words.join(" ")
                        )));
                    }
                }
            }
        }

        let vocab: Vec<String> = by_label
            .values()
            .flatten()
            .flatten()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: HashMap<String, usize> =
            vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();

        let mut intents = Vec::new();
        let mut phrasings = Vec::new();
        for (label, phr) in by_label {
            let mut ids: Vec<Vec<usize>> = phr
                .iter()
                .map(|ws| ws.iter().map(|w| index[w]).collect())
                .collect();
            ids.sort();
            ids.dedup();
            intents.push(label);
            phrasings.push(ids);
        }
        Ok(Self {
            config,
            vocab,
            index,
            intents,
            phrasings,
        })
    }

    pub fn default_grammar() -> Self {
        Self::build(GrammarConfig::default()).expect("default grammar is valid")
    }

    pub fn slots(&self) -> SlotSpace {
        SlotSpace {
            action: self.config.actions.len(),
            object: self.config.objects.len(),
            location: self.config.locations.len(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn token_id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn encode(&self, words: &[&str]) -> Result<Vec<usize>> {
        words
            .iter()
            .map(|w| {
                self.token_id(w)
                    .ok_or_else(|| Error::Config(format!("word {w:?} not in vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().map(|&i| self.vocab[i].as_str()).collect()
    }

    /// Intent for an exact phrasing, if the grammar generates it.
    pub fn parse(&self, words: &[&str]) -> Option<SlotLabel> {
        let ids = self.encode(words).ok()?;
        self.intents
            .iter()
            .zip(&self.phrasings)
            .find(|(_, ps)| ps.contains(&ids))
            .map(|(l, _)| *l)
    }

    pub fn label_names(&self, label: &SlotLabel) -> (&str, &str, &str) {
        (
            &self.config.actions[label.action],
            &self.config.objects[label.object],
            &self.config.locations[label.location],
        )
    }

    pub fn label_from_names(&self, action: &str, object: &str, location: &str) -> Result<SlotLabel> {
        Ok(SlotLabel {
            action: position(&self.config.actions, action, "action")?,
            object: position(&self.config.objects, object, "object")?,
            location: position(&self.config.locations, location, "location")?,
        })
    }

    pub fn intent_index(&self, label: &SlotLabel) -> Option<usize> {
        self.intents.iter().position(|l| l == label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intent_count_matches_exhaustive_enumeration() {
        let g = Grammar::default_grammar();
        let cfg = &g.config;
        let mut valid = 0;
        for a in &cfg.actions {
            for o in &cfg.objects {
                for l in &cfg.locations {
                    if cfg.templates.iter().any(|t| t.admits(a, o, l)) {
                        valid += 1;
                    }
                }
            }
        }
        assert_eq!(g.intents.len(), valid);
        assert_eq!(valid, 31);
        assert_eq!(g.slots(), SlotSpace { action: 6, object: 14, location: 4 });
    }

    #[test]
    fn every_intent_has_two_phrasings() {
        let g = Grammar::default_grammar();
        assert!(g.phrasings.iter().all(|p| p.len() >= 2));
    }

    #[test]
    fn phrasings_are_unambiguous() {
        let g = Grammar::default_grammar();
        let mut seen = HashMap::new();
        for (label, ps) in g.intents.iter().zip(&g.phrasings) {
            for p in ps {
                assert!(seen.insert(p.clone(), *label).is_none());
            }
        }
        let distinct: BTreeSet<_> = g.vocab.iter().collect();
        assert_eq!(distinct.len(), g.vocab.len());
    }

    #[test]
    fn lamp_off_example() {
        let g = Grammar::default_grammar();
        let label = g.parse(&["turn", "the", "lamp", "off"]).unwrap();
        assert_eq!(g.label_names(&label), ("deactivate", "lamp", NONE));
    }

    #[test]
    fn location_slot_is_filled() {
        let g = Grammar::default_grammar();
        let label = g
            .parse(&["increase", "the", "temperature", "in", "the", "bedroom"])
            .unwrap();
        assert_eq!(g.label_names(&label), ("increase", "heat", "bedroom"));
    }

    #[test]
    fn rejects_empty_slot_list() {
        let mut cfg = GrammarConfig::default();
        cfg.locations.clear();
        assert!(Grammar::build(cfg).is_err());
    }

    #[test]
    fn rejects_ambiguous_templates() {
        let mut cfg = GrammarConfig::default();
        cfg.templates.push(Template::new("deactivate", "turn on the {object}", &["lamp"]));
        assert!(Grammar::build(cfg).is_err());
    }
}
