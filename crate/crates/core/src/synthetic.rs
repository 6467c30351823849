//! A seeded single-intent restaurant-search dataset built from templates.
//!
//! The declared entity values are a subset of the values drawn into the
//! utterances, so held-out queries contain values no gazetteer lists.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{slot, text, Chunk, CustomEntity, Dataset, EntityDef, EntityValue, IntentDef, Utterance};
use crate::normalize::verbalize_number;

pub const INTENT: &str = "FindRestaurant";
pub const DEFAULT_SIZE: usize = 1000;
pub const DEFAULT_SEED: u64 = 2018;

const CITIES: &[&str] = &[
    "paris", "london", "berlin", "madrid", "rome", "lisbon", "vienna", "prague", "warsaw", "dublin",
    "oslo", "stockholm", "helsinki", "copenhagen", "amsterdam", "brussels", "zurich", "geneva", "milan", "naples",
    "new york", "los angeles", "san francisco", "chicago", "boston", "seattle", "denver", "austin", "miami", "atlanta",
    "tokyo", "osaka", "kyoto", "seoul", "beijing", "shanghai", "hong kong", "singapore", "bangkok", "hanoi",
    "sydney", "melbourne", "auckland", "toronto", "montreal", "vancouver", "mexico city", "lima", "bogota", "santiago",
    "cairo", "nairobi", "lagos", "casablanca", "tunis", "istanbul", "athens", "sofia", "bucharest", "budapest",
    "lyon", "marseille", "bordeaux", "toulouse", "nice", "nantes", "lille", "strasbourg", "rennes", "grenoble",
    "munich", "hamburg", "cologne", "frankfurt", "stuttgart", "leipzig", "dresden", "bremen", "hanover", "nuremberg",
    "porto", "seville", "valencia", "bilbao", "granada", "florence", "venice", "turin", "genoa", "bologna",
];

const CUISINES: &[&str] = &[
    "italian", "french", "chinese", "japanese", "indian", "thai", "mexican", "greek", "spanish", "turkish",
    "korean", "vietnamese", "lebanese", "moroccan", "ethiopian", "peruvian", "brazilian", "german", "polish", "russian",
    "persian", "indonesian", "malaysian", "filipino", "cuban", "jamaican", "portuguese", "hungarian", "swedish", "nepalese",
];

/// Declared gazetteer sizes; the remaining values only occur in utterances.
const DECLARED_CITIES: usize = 30;
const DECLARED_CUISINES: usize = 10;

/// `{city}`, `{cuisine}` and `{people}` mark slots.
const TEMPLATES: &[&str] = &[
    "find me a {cuisine} restaurant in {city}",
    "i want to eat {cuisine} food in {city}",
    "book a table for {people} in {city}",
    "book a {cuisine} place for {people} people",
    "is there a good {cuisine} restaurant near {city}",
    "show me {cuisine} restaurants",
    "where can i get {cuisine} food",
    "restaurants in {city} please",
    "we are {people} looking for {cuisine} food in {city}",
    "reserve a table for {people} at a {cuisine} restaurant",
    "any {cuisine} spots around {city}",
    "i am craving {cuisine} tonight",
    "table for {people} in {city} tonight",
    "find a restaurant in {city} for {people} people",
    "search for {cuisine} cuisine",
    "looking for somewhere to eat in {city}",
    "get me a {cuisine} dinner for {people}",
    "what are the best {cuisine} places in {city}",
    "recommend a restaurant in {city}",
    "i need a table for {people}",
    "let us have {cuisine} in {city} with {people} friends",
    "cheap {cuisine} food near {city} please",
    "can you find {cuisine} restaurants in {city} for {people} of us",
    "dinner in {city}",
    "lunch somewhere {cuisine}",
];

fn fill(template: &str, rng: &mut ChaCha8Rng) -> Utterance {
    let mut chunks: Vec<Chunk> = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let close = open + rest[open..].find('}').expect("closed placeholder");
        if open > 0 {
            chunks.push(text(&rest[..open]));
        }
        match &rest[open + 1..close] {
            "city" => chunks.push(slot(CITIES.choose(rng).expect("cities"), "city", "city")),
            "cuisine" => chunks.push(slot(CUISINES.choose(rng).expect("cuisines"), "cuisine", "cuisine")),
            "people" => {
                let n: i64 = rng.gen_range(1..=12);
                let surface = if rng.gen_bool(0.5) {
                    n.to_string()
                } else {
                    verbalize_number(n).expect("small number").join(" ")
                };
                chunks.push(slot(&surface, "snips/number", "party_size"));
            }
            other => unreachable!("unknown placeholder {other}"),
        }
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        chunks.push(text(rest));
    }
    Utterance::from_chunks(chunks)
}

fn custom(values: &[&str]) -> EntityDef {
    EntityDef::Custom(CustomEntity {
        values: values
            .iter()
            .map(|v| EntityValue {
                value: v.to_string(),
                synonyms: Vec::new(),
            })
            .collect(),
        automatically_extensible: true,
    })
}

/// `size` utterances drawn uniformly over templates and values.
pub fn restaurant_dataset(size: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let utterances = (0..size)
        .map(|_| {
            let template = TEMPLATES.choose(&mut rng).expect("templates");
            fill(template, &mut rng)
        })
        .collect();
    Dataset {
        language: "en".into(),
        intents: BTreeMap::from([(INTENT.to_string(), IntentDef { utterances })]),
        entities: BTreeMap::from([
            ("city".to_string(), custom(&CITIES[..DECLARED_CITIES])),
            ("cuisine".to_string(), custom(&CUISINES[..DECLARED_CUISINES])),
            (
                "snips/number".to_string(),
                EntityDef::Builtin {
                    kind: "snips/number".into(),
                },
            ),
        ]),
    }
}

/// The bundled 1,000-utterance dataset.
pub fn synthetic() -> Dataset {
    restaurant_dataset(DEFAULT_SIZE, DEFAULT_SEED)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::validate_dataset;

    #[test]
    fn valid_and_deterministic() {
        let d = synthetic();
        assert!(validate_dataset(&d).is_empty(), "{:?}", validate_dataset(&d));
        assert_eq!(d.utterance_count(), DEFAULT_SIZE);
        assert_eq!(d, synthetic());
        assert_ne!(d, restaurant_dataset(DEFAULT_SIZE, 1));
    }
}
