//! Synthetic 30-artwork corpus in Artpedia's native layout, with small
//! images whose colors match the visual answers and 3 to 5 questions of
//! each type per artwork. Every name in it is invented.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{write_jsonl, ArtworkRecord, QaRecord};
use crate::classifier::Route;
use crate::error::{Error, Result};
use crate::vqa::Raster;

pub const SAMPLE_ARTWORKS: usize = 30;
pub const ARTPEDIA_FILE: &str = "artpedia.json";
pub const IMAGE_SIZE: usize = 48;

const COLORS: &[(&str, [u8; 3])] = &[
    ("red", [200, 30, 30]),
    ("blue", [30, 60, 200]),
    ("green", [40, 160, 60]),
    ("yellow", [230, 210, 40]),
    ("white", [240, 240, 240]),
    ("black", [20, 20, 20]),
    ("brown", [120, 70, 30]),
    ("purple", [120, 40, 150]),
];

#[derive(Clone, Copy)]
enum Shape {
    Disc,
    Tall,
    Wide,
    Square,
    Cross,
}

const OBJECTS: &[(&str, Shape)] = &[
    ("apple", Shape::Disc),
    ("candle", Shape::Tall),
    ("boat", Shape::Wide),
    ("book", Shape::Square),
    ("lantern", Shape::Cross),
];

const FIRST: &[&str] = &["aldo", "berta", "cosimo", "dora", "elia", "fenna", "guido", "hester", "ivo", "jolanda"];
const LAST: &[&str] = &["marren", "voss", "calder", "brunelli", "okafor", "lindqvist", "strand", "ferrante"];
const MUSEUMS: &[&str] = &["harbor gallery", "civic museum", "lantern hall", "royal collection", "north gallery"];
const CITIES: &[&str] = &["vellan", "ostrik", "maravel", "dunholt", "serrano", "kestrel"];
const MOVEMENTS: &[&str] = &["lumenism", "the verdant school", "quiet realism", "the glass circle"];
const PATRONS: &[&str] = &["duke orsino", "the guild of weavers", "bishop anselm", "a merchant family"];

pub struct SampleArtwork {
    pub record: ArtworkRecord,
    pub questions: Vec<QaRecord>,
    pub image: Raster,
}

fn in_shape(shape: Shape, x: usize, y: usize) -> bool {
    let (cx, cy) = (x as i64 - 24, y as i64 - 24);
    match shape {
        Shape::Disc => cx * cx + cy * cy <= 12 * 12,
        Shape::Tall => cx.abs() <= 5 && cy.abs() <= 16,
        Shape::Wide => cx.abs() <= 16 && cy.abs() <= 6,
        Shape::Square => cx.abs() <= 10 && cy.abs() <= 10,
        Shape::Cross => (cx.abs() <= 4 && cy.abs() <= 14) || (cy.abs() <= 4 && cx.abs() <= 14),
    }
}

fn paint(bg: [u8; 3], fg: [u8; 3], shape: Shape, rng: &mut ChaCha8Rng) -> Raster {
    let mut img = Raster::filled(IMAGE_SIZE, IMAGE_SIZE, bg);
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let base = if in_shape(shape, x, y) { fg } else { bg };
            let jitter: i16 = rng.gen_range(-12..=12);
            let px = base.map(|c| (i16::from(c) + jitter).clamp(0, 255) as u8);
            img.set_pixel(x, y, px);
        }
    }
    img
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &'a [&'a str]) -> &'a str {
    items.choose(rng).expect("nonempty list")
}

fn capitalize(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut c = w.chars();
            c.next().map_or_else(String::new, |f| f.to_uppercase().chain(c).collect())
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn questions(
    id: &str,
    route: Route,
    pool: Vec<(String, String)>,
    rng: &mut ChaCha8Rng,
) -> Vec<QaRecord> {
    let n = rng.gen_range(3..=5).min(pool.len());
    let tag = match route {
        Route::Visual => 'v',
        Route::Contextual => 'c',
    };
    pool.choose_multiple(rng, n)
        .enumerate()
        .map(|(k, (q, a))| QaRecord {
            id: format!("{id}-{tag}{k}"),
            artwork_id: id.to_string(),
            question: q.clone(),
            answers: vec![a.clone()],
            route,
            split: None,
        })
        .collect()
}

pub fn generate_sample(seed: u64) -> Vec<SampleArtwork> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(SAMPLE_ARTWORKS);
    for i in 0..SAMPLE_ARTWORKS {
        let id = format!("s{:02}", i + 1);
        let (bg_name, bg) = COLORS[rng.gen_range(0..COLORS.len())];
        let (fg_name, fg) = loop {
            let c = COLORS[rng.gen_range(0..COLORS.len())];
            if c.0 != bg_name {
                break c;
            }
        };
        let (object, shape) = OBJECTS[rng.gen_range(0..OBJECTS.len())];
        let painter = format!("{} {}", pick(&mut rng, FIRST), pick(&mut rng, LAST));
        let year = rng.gen_range(1450..=1890).to_string();
        let museum = pick(&mut rng, MUSEUMS);
        let city = pick(&mut rng, CITIES);
        let movement = pick(&mut rng, MOVEMENTS);
        let patron = pick(&mut rng, PATRONS);
        let title = format!("{} on {} ground", capitalize(object), capitalize(bg_name));

        let record = ArtworkRecord {
            id: id.clone(),
            title,
            image: None,
            visual_sentences: vec![
                format!("A {fg_name} {object} stands in the middle of the canvas."),
                format!("The background is painted {bg_name}."),
            ],
            contextual_sentences: vec![
                format!("The painting was made by {} in {year}.", capitalize(&painter)),
                format!("It is now kept in the {} in {}.", capitalize(museum), capitalize(city)),
                format!("{} was a leading figure of {}.", capitalize(&painter), capitalize(movement)),
                format!("The work was commissioned by {}.", capitalize(patron)),
            ],
            metadata: BTreeMap::from([
                ("author".to_string(), capitalize(&painter)),
                ("year".to_string(), year.clone()),
            ]),
        };
        let visual = vec![
            ("what color is the background ?".to_string(), bg_name.to_string()),
            (format!("what color is the {object} ?"), fg_name.to_string()),
            ("what object is in the middle of the painting ?".to_string(), object.to_string()),
            (format!("what is painted in {fg_name} ?"), object.to_string()),
            (format!("is the background {bg_name} ?"), "yes".to_string()),
        ];
        let contextual = vec![
            ("who painted this work ?".to_string(), painter.clone()),
            ("when was the painting made ?".to_string(), year),
            ("where is the painting kept ?".to_string(), museum.to_string()),
            ("in which city is it displayed ?".to_string(), city.to_string()),
            ("which movement did the painter belong to ?".to_string(), movement.to_string()),
            ("who commissioned the work ?".to_string(), patron.to_string()),
        ];
        let mut qs = questions(&id, Route::Visual, visual, &mut rng);
        qs.extend(questions(&id, Route::Contextual, contextual, &mut rng));
        let image = paint(bg, fg, shape, &mut rng);
        out.push(SampleArtwork {
            record,
            questions: qs,
            image,
        });
    }
    out
}

/// Writes `artpedia.json`, `questions.jsonl` and `images/<id>.png`.
pub fn write_sample(dir: &Path, seed: u64) -> Result<usize> {
    let items = generate_sample(seed);
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut native = serde_json::Map::new();
    let mut qs = Vec::new();
    for it in &items {
        let r = &it.record;
        native.insert(
            r.id.clone(),
            json!({
                "title": r.title,
                "year": r.metadata["year"],
                "author": r.metadata["author"],
                "img_url": format!("images/{}.png", r.id),
                "visual_sentences": r.visual_sentences,
                "contextual_sentences": r.contextual_sentences,
            }),
        );
        it.image.save_png(&images.join(format!("{}.png", r.id)))?;
        qs.extend(it.questions.iter().cloned());
    }
    let path = dir.join(ARTPEDIA_FILE);
    let text = serde_json::to_string_pretty(&native).expect("json value serializes") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    write_jsonl(&dir.join(super::QUESTIONS_FILE), &qs)?;
    Ok(items.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qa::locate_span;
    use crate::text::tokenize;

    #[test]
    fn counts_and_answer_spans() {
        let items = generate_sample(1);
        assert_eq!(items.len(), 30);
        for it in &items {
            let v = it.questions.iter().filter(|q| q.route == Route::Visual).count();
            let c = it.questions.len() - v;
            assert!((3..=5).contains(&v) && (3..=5).contains(&c));
            for q in it.questions.iter().filter(|q| q.route == Route::Contextual) {
                let found = it.record.contextual_sentences.iter().any(|s| {
                    locate_span(&tokenize(s), &tokenize(&q.answers[0])).is_some()
                });
                assert!(found, "{} not locatable", q.id);
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_sample(4);
        let b = generate_sample(4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.record, y.record);
            assert_eq!(x.questions, y.questions);
            assert_eq!(x.image, y.image);
        }
    }
}
