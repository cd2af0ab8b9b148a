//! Synthetic corpora for tests, demos and oracle checks.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    Corpus, Dialogue, Image, ImageSet, Mention, RankingEvent, Span, Speaker, Utterance,
    MANUAL_LABEL_KEYS,
};
use crate::retrieval::PlantedBackend;
use crate::scalar::Scalar;

const COLORS: [&str; 12] = [
    "red", "green", "blue", "yellow", "purple", "orange", "black", "white", "grey", "pink",
    "brown", "golden",
];
const NOUNS: [&str; 8] = [
    "dog", "cat", "apple", "chair", "lamp", "boat", "house", "tree",
];

/// Shape of a planted corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedShape {
    pub image_sets: usize,
    pub images_per_set: usize,
    pub dialogues_per_set: usize,
    /// Images ranked per round; at most `images_per_set`.
    pub ranked_per_round: usize,
    pub rounds: u32,
}

impl Default for PlantedShape {
    fn default() -> Self {
        PlantedShape {
            image_sets: 2,
            images_per_set: 9,
            dialogues_per_set: 1,
            ranked_per_round: 9,
            rounds: 4,
        }
    }
}

/// The unique label of image `k` of set `s`.
pub fn planted_label(set: usize, k: usize) -> String {
    format!(
        "the {} {}",
        COLORS[k % COLORS.len()],
        NOUNS[set % NOUNS.len()]
    )
}

fn labels(text: &str) -> BTreeMap<String, String> {
    MANUAL_LABEL_KEYS
        .iter()
        .map(|k| (k.to_string(), text.to_string()))
        .collect()
}

fn utterance(index: usize, round: u32, text: String, mentions: Vec<Mention>) -> Utterance {
    Utterance {
        index,
        speaker: if index.is_multiple_of(2) {
            Speaker::A
        } else {
            Speaker::B
        },
        text,
        round,
        mentions,
    }
}

/// A corpus where every single-image mention carries its image's unique
/// label under every window, and no mention refers to an already ranked
/// image.
///
/// Each ranking step is a proposal naming the image by its label followed
/// by an agreement referring back with "it"; the image is ranked at the
/// agreement.
pub fn planted_corpus(shape: PlantedShape, seed: u64) -> Corpus {
    assert!(shape.images_per_set <= COLORS.len() && shape.image_sets <= NOUNS.len());
    assert!(shape.ranked_per_round <= shape.images_per_set && (1..=4).contains(&shape.rounds));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Corpus::default();
    for (s, &noun) in NOUNS.iter().enumerate().take(shape.image_sets) {
        let set_id = format!("{noun}s");
        corpus.image_sets.push(ImageSet {
            set_id: set_id.clone(),
            category: noun.to_string(),
            images: (0..shape.images_per_set)
                .map(|k| Image {
                    image_id: format!("{noun}_{}", COLORS[k]),
                    uri: format!("images/{noun}_{}.jpg", COLORS[k]),
                })
                .collect(),
        });
        for d in 0..shape.dialogues_per_set {
            let dialogue_id = format!("{set_id}_{d}");
            let mut utterances = Vec::new();
            let mut events = Vec::new();
            let mut n = 0;
            let next_id = |n: &mut usize| {
                *n += 1;
                format!("{dialogue_id}_m{n}")
            };
            let all: BTreeSet<String> = (0..shape.images_per_set)
                .map(|k| format!("{noun}_{}", COLORS[k]))
                .collect();
            let opener = format!("Let's sort the {noun}s.");
            let start = "Let's sort ".chars().count();
            utterances.push(utterance(
                0,
                1,
                opener.clone(),
                vec![Mention {
                    mention_id: next_id(&mut n),
                    span: Span::new(start, opener.chars().count() - 1),
                    referent_image_ids: all,
                    chain_id: "all".into(),
                    manual_labels: BTreeMap::new(),
                }],
            ));
            for round in 1..=shape.rounds {
                let mut order: Vec<usize> = (0..shape.images_per_set).collect();
                order.shuffle(&mut rng);
                for &k in order.iter().take(shape.ranked_per_round) {
                    let label = planted_label(s, k);
                    let image_id = format!("{noun}_{}", COLORS[k]);
                    let chain = format!("{image_id}_r{round}");
                    let refs: BTreeSet<String> = [image_id.clone()].into();
                    let text = format!("Next, {label} fits best.");
                    let i = utterances.len();
                    utterances.push(utterance(
                        i,
                        round,
                        text,
                        vec![Mention {
                            mention_id: next_id(&mut n),
                            span: Span::new(6, 6 + label.chars().count()),
                            referent_image_ids: refs.clone(),
                            chain_id: chain.clone(),
                            manual_labels: labels(&label),
                        }],
                    ));
                    utterances.push(utterance(
                        i + 1,
                        round,
                        "Agreed, put it there.".into(),
                        vec![Mention {
                            mention_id: next_id(&mut n),
                            span: Span::new(12, 14),
                            referent_image_ids: refs,
                            chain_id: chain,
                            manual_labels: labels(&label),
                        }],
                    ));
                    events.push(RankingEvent {
                        image_id,
                        round,
                        utterance_index: i + 1,
                    });
                }
            }
            corpus.dialogues.push(Dialogue {
                dialogue_id,
                image_set_id: set_id.clone(),
                task_instructions: "Rank the images together.".into(),
                utterances,
                ranking_events: events,
            });
        }
    }
    corpus
}

/// Backend mapping each image, and its label, to the same basis vector.
pub fn planted_backend<T: Scalar>(corpus: &Corpus) -> PlantedBackend<T> {
    let n: usize = corpus.image_sets.iter().map(|s| s.images.len()).sum();
    let mut b = PlantedBackend::new("planted", n);
    let mut k = 0;
    for (s, set) in corpus.image_sets.iter().enumerate() {
        for (i, img) in set.images.iter().enumerate() {
            let mut v = vec![T::zero(); n];
            v[k] = T::one();
            b.plant_text(planted_label(s, i), v.clone());
            b.plant_image(img.image_id.clone(), v);
            k += 1;
        }
    }
    b
}

const FILLER: [&str; 10] = [
    "so", "maybe", "yes", "hmm", "well", "okay", "right", "no", "sure", "then",
];
const PRONOUNS: [&str; 3] = ["it", "that", "this one"];
const ADJECTIVES: [&str; 8] = [
    "small", "shiny", "dark", "striped", "round", "tall", "fluffy", "old",
];

/// A one-dialogue corpus with randomly interleaved coreference chains.
///
/// Utterances hold zero to three mentions separated by filler words;
/// mentions are full noun phrases or pronouns, so chains mix descriptive
/// and non-descriptive links.
pub fn random_chain_corpus(seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images: Vec<Image> = (0..9)
        .map(|k| Image {
            image_id: format!("img{k}"),
            uri: format!("images/img{k}.jpg"),
        })
        .collect();
    let n_chains = rng.random_range(1..=4);
    let chain_image: Vec<usize> = (0..n_chains).map(|_| rng.random_range(0..9)).collect();
    let n_utts = rng.random_range(2..=14);
    let mut utterances = Vec::new();
    let mut n = 0;
    for i in 0..n_utts {
        let mut text = String::new();
        let mut mentions = Vec::new();
        let k = rng.random_range(0..=3);
        for _ in 0..k {
            text.push_str(FILLER[rng.random_range(0..FILLER.len())]);
            text.push(' ');
            let c = rng.random_range(0..n_chains);
            let surface = if rng.random_bool(0.3) {
                PRONOUNS[rng.random_range(0..PRONOUNS.len())].to_string()
            } else {
                format!(
                    "the {} {}",
                    ADJECTIVES[rng.random_range(0..ADJECTIVES.len())],
                    NOUNS[rng.random_range(0..NOUNS.len())]
                )
            };
            let start = text.chars().count();
            text.push_str(&surface);
            n += 1;
            mentions.push(Mention {
                mention_id: format!("r{seed}_m{n}"),
                span: Span::new(start, start + surface.chars().count()),
                referent_image_ids: [images[chain_image[c]].image_id.clone()].into(),
                chain_id: format!("c{c}"),
                manual_labels: BTreeMap::new(),
            });
            text.push(' ');
        }
        text.push_str(FILLER[rng.random_range(0..FILLER.len())]);
        text.push('.');
        utterances.push(utterance(i, 1, text, mentions));
    }
    Corpus {
        image_sets: vec![ImageSet {
            set_id: "random".into(),
            category: "things".into(),
            images,
        }],
        dialogues: vec![Dialogue {
            dialogue_id: format!("random_{seed}"),
            image_set_id: "random".into(),
            task_instructions: String::new(),
            utterances,
            ranking_events: vec![],
        }],
    }
}
