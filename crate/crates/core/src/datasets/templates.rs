//! Templated visual and contextual questions for classifier training when
//! the large public pools are not available.
//!
//! Slot fillers are divided between the two parts (even positions train,
//! odd positions held out), so no held-out question is an instantiation
//! seen in training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{LabeledQuestion, Route};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TemplatePart {
    Train,
    HeldOut,
}

const VISUAL: &[&str] = &[
    "what color is the {object} ?",
    "what color is the {person} 's {garment} ?",
    "how many {object}s are in the painting ?",
    "is there a {object} in the picture ?",
    "what is the {person} holding ?",
    "what is the {person} wearing ?",
    "where is the {object} in the image ?",
    "what is next to the {object} ?",
    "is the {person} sitting or standing ?",
    "what is on the {object} ?",
    "what shape is the {object} ?",
    "how many people can you see near the {object} ?",
];

const CONTEXTUAL: &[&str] = &[
    "who painted the {work} ?",
    "when was the {work} painted ?",
    "in which museum is the {work} kept ?",
    "who commissioned the {work} ?",
    "which movement did {artist} belong to ?",
    "in what year did {artist} die ?",
    "who was the teacher of {artist} ?",
    "where was {artist} born ?",
    "what is the story behind the {work} ?",
    "which city did {artist} work in ?",
    "who owned the {work} before the museum ?",
    "why did {artist} paint the {work} ?",
];

const OBJECT: &[&str] = &[
    "dog", "horse", "boat", "vase", "table", "tree", "bridge", "window", "apple", "book", "candle",
    "lute", "skull", "ship", "flower", "chair", "mirror", "cloud", "river", "tower",
];
const PERSON: &[&str] = &[
    "woman", "man", "child", "girl", "boy", "saint", "king", "queen", "soldier", "angel", "monk",
    "lady", "shepherd", "musician",
];
const GARMENT: &[&str] = &[
    "dress", "hat", "cloak", "robe", "shirt", "veil", "scarf", "coat", "gown", "collar",
];
const WORK: &[&str] = &[
    "portrait", "fresco", "altarpiece", "triptych", "landscape", "still life", "panel", "mural",
    "self portrait", "seascape", "canvas", "painting",
];
const ARTIST: &[&str] = &[
    "vermeer", "titian", "rubens", "goya", "turner", "monet", "giotto", "durer", "holbein",
    "caravaggio", "velazquez", "rembrandt", "botticelli", "raphael",
];

fn fillers(slot: &str) -> &'static [&'static str] {
    match slot {
        "object" => OBJECT,
        "person" => PERSON,
        "garment" => GARMENT,
        "work" => WORK,
        "artist" => ARTIST,
        other => panic!("unknown template slot {other}"),
    }
}

fn part_of(list: &'static [&'static str], part: TemplatePart) -> Vec<&'static str> {
    let parity = match part {
        TemplatePart::Train => 0,
        TemplatePart::HeldOut => 1,
    };
    list.iter()
        .enumerate()
        .filter(|(i, _)| i % 2 == parity)
        .map(|(_, s)| *s)
        .collect()
}

fn instantiate(template: &str, part: TemplatePart, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let close = open + rest[open..].find('}').expect("balanced template");
        out.push_str(&rest[..open]);
        let choices = part_of(fillers(&rest[open + 1..close]), part);
        out.push_str(choices.choose(rng).expect("nonempty filler part"));
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    out
}

/// `n` questions, half of each type (visual gets the odd one out), shuffled.
pub fn generate_templated(n: usize, seed: u64, part: TemplatePart) -> Vec<LabeledQuestion> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (route, templates) = if i % 2 == 0 {
            (Route::Visual, VISUAL)
        } else {
            (Route::Contextual, CONTEXTUAL)
        };
        let t = templates[rng.gen_range(0..templates.len())];
        out.push(LabeledQuestion::new(instantiate(t, part, &mut rng), route));
    }
    out.shuffle(&mut rng);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn parts_do_not_share_questions() {
        let train: HashSet<String> = generate_templated(2000, 1, TemplatePart::Train)
            .into_iter()
            .map(|q| q.text)
            .collect();
        let held = generate_templated(500, 2, TemplatePart::HeldOut);
        assert!(held.iter().all(|q| !train.contains(&q.text)));
    }

    #[test]
    fn balanced_and_deterministic() {
        let a = generate_templated(100, 5, TemplatePart::Train);
        assert_eq!(a.iter().filter(|q| q.route == Route::Visual).count(), 50);
        assert_eq!(a, generate_templated(100, 5, TemplatePart::Train));
        assert!(a.iter().all(|q| !q.text.contains('{')));
    }
}
