//! Deterministic templated processes for desk-scale training and tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{tokenize, LocationGrid, LocationState, ProcessInstance};

const ENTITIES: &[&str] = &[
    "water",
    "oxygen",
    "sugar",
    "carbon dioxide",
    "glucose",
    "seed",
    "rock",
    "sediment",
    "magma",
    "blood",
    "salt",
    "ice",
    "nutrients",
    "pollen",
    "mixture",
    "electric oven",
];

const LOCATIONS: &[&str] = &[
    "leaf",
    "root",
    "soil",
    "cloud",
    "ocean",
    "air",
    "stomach",
    "lungs",
    "river",
    "body",
    "left side of the heart",
    "volcano",
    "kitchen",
    "ground",
];

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Unborn,
    Somewhere,
    /// Paragraph offsets of the location tokens plus the location index.
    At(usize, usize, usize),
    Gone,
}

impl Status {
    fn exists(self) -> bool {
        matches!(self, Status::Somewhere | Status::At(..))
    }

    fn state(self) -> LocationState {
        match self {
            Status::Unborn | Status::Gone => LocationState::Nowhere,
            Status::Somewhere => LocationState::Somewhere,
            Status::At(start, end, _) => LocationState::Span { start, end },
        }
    }
}

struct Builder {
    tokens: Vec<String>,
    sentences: Vec<Vec<String>>,
}

impl Builder {
    /// Appends a sentence assembled from pieces; returns the paragraph
    /// offsets of the piece at `mark`, if any.
    fn sentence(&mut self, pieces: &[&str], mark: Option<usize>) -> Option<(usize, usize)> {
        let mut sent = Vec::new();
        let mut span = None;
        for (k, piece) in pieces.iter().enumerate() {
            let toks = tokenize(piece);
            if Some(k) == mark {
                let start = self.tokens.len() + sent.len();
                span = Some((start, start + toks.len() - 1));
            }
            sent.extend(toks);
        }
        self.tokens.extend(sent.iter().cloned());
        self.sentences.push(sent);
        span
    }
}

/// Generates `n` processes (2-4 entities, 3-6 sentences) from `seed`.
///
/// Every state change is stated in a sentence that mentions the entity, so
/// gold grids satisfy the existence, creation and mention constraints.
pub fn synth_corpus(seed: u64, n: usize) -> Vec<ProcessInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|k| synth_one(&mut rng, format!("synth-{seed}-{k:04}"))).collect()
}

fn synth_one(rng: &mut ChaCha8Rng, id: String) -> ProcessInstance {
    let n_ent = rng.gen_range(2..=4);
    let n_sent = rng.gen_range(3..=6);
    let names: Vec<&str> = ENTITIES.choose_multiple(rng, n_ent).copied().collect();
    let mut status: Vec<Status> = (0..n_ent)
        .map(|_| {
            if rng.gen_bool(0.6) {
                Status::Somewhere
            } else {
                Status::Unborn
            }
        })
        .collect();
    if status.iter().all(|s| !s.exists()) {
        status[0] = Status::Somewhere;
    }
    let mut rows: Vec<Vec<LocationState>> = status.iter().map(|s| vec![s.state()]).collect();
    let mut b = Builder {
        tokens: Vec::new(),
        sentences: Vec::new(),
    };

    for step in 0..n_sent {
        let remaining = n_sent - step;
        let unborn: Vec<usize> = (0..n_ent).filter(|&i| status[i] == Status::Unborn).collect();
        let alive: Vec<usize> = (0..n_ent).filter(|&i| status[i].exists()).collect();
        let must_create = !unborn.is_empty() && unborn.len() >= remaining;

        let roll: f64 = rng.gen();
        if !unborn.is_empty() && (must_create || roll < 0.3) {
            let target = *unborn.choose(rng).expect("nonempty");
            // conversion when something alive can turn into the target
            if !alive.is_empty() && rng.gen_bool(0.4) {
                let source = *alive.choose(rng).expect("nonempty");
                b.sentence(&["the", names[source], "turns into", names[target], "."], None);
                status[target] = match status[source] {
                    Status::At(s, e, l) => Status::At(s, e, l),
                    _ => Status::Somewhere,
                };
                status[source] = Status::Gone;
            } else if rng.gen_bool(0.6) {
                let loc = rng.gen_range(0..LOCATIONS.len());
                let (s, e) = b
                    .sentence(&[names[target], "is formed in the", LOCATIONS[loc], "."], Some(2))
                    .expect("marked");
                status[target] = Status::At(s, e, loc);
            } else {
                b.sentence(&[names[target], "is produced", "."], None);
                status[target] = Status::Somewhere;
            }
        } else if !alive.is_empty() && roll < 0.85 {
            let target = *alive.choose(rng).expect("nonempty");
            let current = match status[target] {
                Status::At(_, _, l) => Some(l),
                _ => None,
            };
            let loc = loop {
                let l = rng.gen_range(0..LOCATIONS.len());
                if Some(l) != current {
                    break l;
                }
            };
            let verb = ["moves to the", "travels to the", "is carried to the"][rng.gen_range(0..3)];
            let (s, e) = b
                .sentence(&["the", names[target], verb, LOCATIONS[loc], "."], Some(3))
                .expect("marked");
            status[target] = Status::At(s, e, loc);
        } else if alive.len() > 1 && roll < 0.95 {
            let target = *alive.choose(rng).expect("nonempty");
            let verb = ["is used up", "disappears"][rng.gen_range(0..2)];
            b.sentence(&["the", names[target], verb, "."], None);
            status[target] = Status::Gone;
        } else {
            b.sentence(&["the process continues", "."], None);
        }
        for (row, s) in rows.iter_mut().zip(&status) {
            row.push(s.state());
        }
    }

    let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    ProcessInstance::new(id, b.sentences, &names, LocationGrid::new(rows))
        .expect("generated instances are valid")
}
