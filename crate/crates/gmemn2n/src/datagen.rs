//! Synthetic corpus generation in the bAbI v1.2 and dialog-task text formats.
//!
//! The QA generators cover the task families used by this project's
//! experiments: single supporting fact (task 1), conjunction (task 12) and
//! positional reasoning (task 17). The dialog generator covers task 1
//! (issuing API calls) in the restaurant domain, together with the shared
//! candidate-response file and knowledge base.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::fs;
use std::io;
use std::path::Path;

const PEOPLE: &[&str] = &["Mary", "John", "Daniel", "Sandra"];
const PLACES: &[&str] = &[
    "bathroom", "hallway", "garden", "kitchen", "office", "bedroom",
];
const MOVE_VERBS: &[&str] = &[
    "moved to the",
    "went to the",
    "journeyed to the",
    "travelled to the",
    "went back to the",
];

/// Task 1: stories of single-person movements, "Where is X?" questions whose
/// answer is the location from X's most recent movement (one supporting fact).
pub fn gen_qa_task1<R: Rng>(questions: usize, rng: &mut R) -> String {
    gen_movement_task(questions, false, rng)
}

/// Task 12: like task 1, but every statement moves two people at once
/// ("X and Y went to the Z."), so the question must resolve the conjunction.
pub fn gen_qa_task12<R: Rng>(questions: usize, rng: &mut R) -> String {
    gen_movement_task(questions, true, rng)
}

fn gen_movement_task<R: Rng>(questions: usize, conjunction: bool, rng: &mut R) -> String {
    const QUESTIONS_PER_STORY: usize = 5;
    assert_eq!(questions % QUESTIONS_PER_STORY, 0);
    let mut out = String::new();
    for _ in 0..questions / QUESTIONS_PER_STORY {
        // person -> (location, line id of the supporting statement)
        let mut positions: Vec<(usize, usize, usize)> = Vec::new(); // (person, place, line)
        let mut line = 0usize;
        for _ in 0..QUESTIONS_PER_STORY {
            for _ in 0..2 {
                line += 1;
                let place = rng.gen_range(0..PLACES.len());
                let verb = MOVE_VERBS[rng.gen_range(0..MOVE_VERBS.len())];
                if conjunction {
                    let a = rng.gen_range(0..PEOPLE.len());
                    let mut b = rng.gen_range(0..PEOPLE.len());
                    while b == a {
                        b = rng.gen_range(0..PEOPLE.len());
                    }
                    out.push_str(&format!(
                        "{line} {} and {} {verb} {} .\n",
                        PEOPLE[a], PEOPLE[b], PLACES[place]
                    ));
                    for p in [a, b] {
                        positions.retain(|(q, _, _)| *q != p);
                        positions.push((p, place, line));
                    }
                } else {
                    let p = rng.gen_range(0..PEOPLE.len());
                    out.push_str(&format!(
                        "{line} {} {verb} {} .\n",
                        PEOPLE[p], PLACES[place]
                    ));
                    positions.retain(|(q, _, _)| *q != p);
                    positions.push((p, place, line));
                }
            }
            line += 1;
            let &(person, place, support) = &positions[rng.gen_range(0..positions.len())];
            out.push_str(&format!(
                "{line} Where is {} ? \t{}\t{support}\n",
                PEOPLE[person], PLACES[place]
            ));
        }
    }
    out
}

const SHAPES: &[&str] = &[
    "triangle",
    "pink rectangle",
    "blue square",
    "red square",
    "red sphere",
    "yellow square",
];

// relation name and (dx, dy) of subject relative to object
const RELATIONS: &[(&str, (i32, i32))] = &[
    ("above", (0, 1)),
    ("below", (0, -1)),
    ("to the left of", (-1, 0)),
    ("to the right of", (1, 0)),
];

/// Task 17: two placement statements over three objects, followed by yes/no
/// questions about pairwise relative positions (both supporting facts are
/// needed for transitively inferred pairs).
pub fn gen_qa_task17<R: Rng>(questions: usize, rng: &mut R) -> String {
    const QUESTIONS_PER_STORY: usize = 8;
    assert_eq!(questions % QUESTIONS_PER_STORY, 0);
    let mut out = String::new();
    for _ in 0..questions / QUESTIONS_PER_STORY {
        // pick three distinct shapes and consistent coordinates
        let mut shapes: Vec<usize> = (0..SHAPES.len()).collect();
        shapes.shuffle(rng);
        let (sa, sb, sc) = (shapes[0], shapes[1], shapes[2]);
        let (coords, anchor, line1, line2) = loop {
            let r1 = rng.gen_range(0..RELATIONS.len());
            let r2 = rng.gen_range(0..RELATIONS.len());
            let b = (0i32, 0i32);
            let a = (RELATIONS[r1].1 .0, RELATIONS[r1].1 .1);
            // second fact anchors the third shape on A or B
            let (anchor_pos, anchor_shape) = if rng.gen_bool(0.5) { (a, sa) } else { (b, sb) };
            let c = (
                anchor_pos.0 + RELATIONS[r2].1 .0,
                anchor_pos.1 + RELATIONS[r2].1 .1,
            );
            if c == a || c == b {
                continue;
            }
            let line1 = format!("The {} is {} the {} .", SHAPES[sa], RELATIONS[r1].0, SHAPES[sb]);
            let line2 = format!(
                "The {} is {} the {} .",
                SHAPES[sc], RELATIONS[r2].0, SHAPES[anchor_shape]
            );
            break ([(sa, a), (sb, b), (sc, c)], anchor_shape, line1, line2);
        };
        out.push_str(&format!("1 {line1}\n2 {line2}\n"));
        // the pair whose relation is never stated directly and must be
        // composed from both facts: facts link (sa,sb) and (sc,anchor)
        let composed = if anchor == sa { (2usize, 1usize) } else { (2usize, 0usize) };
        for q in 0..QUESTIONS_PER_STORY {
            // half the questions target the composed pair so that answering
            // them requires combining both supporting facts
            let (x, y) = if rng.gen_bool(0.5) {
                let (i, j) = if rng.gen_bool(0.5) { composed } else { (composed.1, composed.0) };
                (coords[i], coords[j])
            } else {
                loop {
                    let i = rng.gen_range(0..3);
                    let j = rng.gen_range(0..3);
                    if i != j {
                        break (coords[i], coords[j]);
                    }
                }
            };
            let mut determinate: Vec<usize> = Vec::new();
            if x.1 .0 != y.1 .0 {
                determinate.push(if x.1 .0 > y.1 .0 { 3 } else { 2 }); // right / left
            }
            if x.1 .1 != y.1 .1 {
                determinate.push(if x.1 .1 > y.1 .1 { 0 } else { 1 }); // above / below
            }
            if determinate.is_empty() {
                // same cell cannot happen for (a,b,c); pairs may still tie on
                // both axes only if equal, which collision avoidance rules out
                unreachable!("objects share a cell");
            }
            let true_rel = determinate[rng.gen_range(0..determinate.len())];
            let (rel, answer) = if rng.gen_bool(0.5) {
                (true_rel, "yes")
            } else {
                // opposite relation on the same axis is determinately false
                (true_rel ^ 1, "no")
            };
            out.push_str(&format!(
                "{} Is the {} {} the {} ? \t{answer}\t1 2\n",
                q + 3,
                SHAPES[x.0],
                RELATIONS[rel].0,
                SHAPES[y.0]
            ));
        }
    }
    out
}

pub const CUISINES: &[&str] = &["british", "cantonese", "french", "indian", "italian", "spanish"];
pub const CUISINES_OOV: &[&str] = &["korean", "vietnamese"];
pub const LOCATIONS: &[&str] = &["bombay", "london", "madrid", "paris", "rome", "seoul"];
pub const LOCATIONS_OOV: &[&str] = &["hanoi", "tokyo"];
pub const NUMBERS: &[&str] = &["two", "four", "six", "eight"];
pub const PRICES: &[&str] = &["cheap", "moderate", "expensive"];

const GREETING: &str = "hello what can i help you with today";
const ON_IT: &str = "i'm on it";
const ASK_CUISINE: &str = "any preference on a type of cuisine";
const ASK_LOCATION: &str = "where should it be";
const ASK_NUMBER: &str = "how many people would be in your party";
const ASK_PRICE: &str = "which price range are looking for";
const LOOKING: &str = "ok let me look into some options for you";

fn all_cuisines() -> Vec<&'static str> {
    CUISINES.iter().chain(CUISINES_OOV).copied().collect()
}

fn all_locations() -> Vec<&'static str> {
    LOCATIONS.iter().chain(LOCATIONS_OOV).copied().collect()
}

/// The shared candidate-response file: every bot utterance the tasks can emit,
/// including API calls over the full (train + OOV) slot inventory.
pub fn gen_dialog_candidates() -> String {
    let mut out = String::new();
    for fixed in [GREETING, ON_IT, ASK_CUISINE, ASK_LOCATION, ASK_NUMBER, ASK_PRICE, LOOKING] {
        out.push_str(&format!("1 {fixed}\n"));
    }
    for cuisine in all_cuisines() {
        for location in all_locations() {
            for number in NUMBERS {
                for price in PRICES {
                    out.push_str(&format!("1 api_call {cuisine} {location} {number} {price}\n"));
                }
            }
        }
    }
    out
}

/// Restaurant knowledge base: one restaurant per (cuisine, location, price)
/// combination with the seven standard properties.
pub fn gen_dialog_kb(seed: u64) -> String {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = String::new();
    for cuisine in all_cuisines() {
        for location in all_locations() {
            for price in PRICES {
                let rating = rng.gen_range(1..=8);
                let name = format!("resto_{location}_{price}_{cuisine}_{rating}stars");
                let number = NUMBERS[rng.gen_range(0..NUMBERS.len())];
                out.push_str(&format!("1 {name} R_phone {name}_phone\n"));
                out.push_str(&format!("1 {name} R_cuisine {cuisine}\n"));
                out.push_str(&format!("1 {name} R_address {name}_address\n"));
                out.push_str(&format!("1 {name} R_location {location}\n"));
                out.push_str(&format!("1 {name} R_number {number}\n"));
                out.push_str(&format!("1 {name} R_price {price}\n"));
                out.push_str(&format!("1 {name} R_rating {rating}\n"));
            }
        }
    }
    out
}

/// Dialog task 1: the user wants a restaurant booking; the bot collects the
/// four slots (cuisine, location, party size, price) and issues the API call.
pub fn gen_dialog_task1<R: Rng>(dialogs: usize, oov: bool, rng: &mut R) -> String {
    let cuisines = if oov { CUISINES_OOV } else { CUISINES };
    let locations = if oov { LOCATIONS_OOV } else { LOCATIONS };
    let mut out = String::new();
    for _ in 0..dialogs {
        let cuisine = cuisines[rng.gen_range(0..cuisines.len())];
        let location = locations[rng.gen_range(0..locations.len())];
        let number = NUMBERS[rng.gen_range(0..NUMBERS.len())];
        let price = PRICES[rng.gen_range(0..PRICES.len())];

        // which slots the user volunteers in the opening request
        let provided: Vec<bool> = (0..4).map(|_| rng.gen_bool(0.5)).collect();
        let mut request = String::from(match rng.gen_range(0..3) {
            0 => "can you book a table",
            1 => "can you make a restaurant reservation",
            _ => "i'd like to book a table",
        });
        if provided[0] {
            request.push_str(&format!(" with {cuisine} cuisine"));
        }
        if provided[1] {
            request.push_str(&format!(" in {location}"));
        }
        if provided[2] {
            request.push_str(&format!(" for {number} people"));
        }
        if provided[3] {
            request.push_str(&format!(" in a {price} price range"));
        }

        let greeting_user = ["hi", "hello", "good morning"][rng.gen_range(0..3)];
        let mut line = 0usize;
        let push = |out: &mut String, line: &mut usize, user: &str, bot: &str| {
            *line += 1;
            out.push_str(&format!("{line} {user}\t{bot}\n"));
        };
        push(&mut out, &mut line, greeting_user, GREETING);
        push(&mut out, &mut line, &request, ON_IT);

        let slot_turns: Vec<(usize, String)> = (0..4)
            .filter(|&s| !provided[s])
            .map(|s| {
                let answer = match s {
                    0 => match rng.gen_range(0..2) {
                        0 => format!("with {cuisine} food"),
                        _ => format!("i love {cuisine} food"),
                    },
                    1 => format!("in {location}"),
                    2 => match rng.gen_range(0..2) {
                        0 => format!("for {number} people please"),
                        _ => format!("we will be {number}"),
                    },
                    _ => match rng.gen_range(0..2) {
                        0 => format!("in a {price} price range please"),
                        _ => format!("i am looking for a {price} restaurant"),
                    },
                };
                (s, answer)
            })
            .collect();
        let questions = [ASK_CUISINE, ASK_LOCATION, ASK_NUMBER, ASK_PRICE];

        let mut pending_answer: Option<String> = None;
        for (slot, answer) in &slot_turns {
            let user = pending_answer.take().unwrap_or_else(|| "<SILENCE>".into());
            push(&mut out, &mut line, &user, questions[*slot]);
            pending_answer = Some(answer.clone());
        }
        let user = pending_answer.take().unwrap_or_else(|| "<SILENCE>".into());
        push(&mut out, &mut line, &user, LOOKING);
        push(
            &mut out,
            &mut line,
            "<SILENCE>",
            &format!("api_call {cuisine} {location} {number} {price}"),
        );
        out.push('\n');
    }
    out
}

/// Writes the full corpus tree used by the experiments:
///
/// ```text
/// <root>/qa/en/qa{1,12,17}_*_{train,test}.txt       (1k scale)
/// <root>/qa/en-10k/qa{1,12,17}_*_{train,test}.txt   (10k scale)
/// <root>/dialog/dialog-babi-task1-API-calls-{trn,dev,tst,tst-OOV}.txt
/// <root>/dialog/dialog-babi-candidates.txt
/// <root>/dialog/dialog-babi-kb.txt
/// ```
pub fn generate_all(root: &Path, seed: u64) -> io::Result<()> {
    let qa_tasks: &[(&str, fn(usize, &mut ChaCha20Rng) -> String)] = &[
        ("qa1_single-supporting-fact", |n, r| gen_qa_task1(n, r)),
        ("qa12_conjunction", |n, r| gen_qa_task12(n, r)),
        ("qa17_positional-reasoning", |n, r| gen_qa_task17(n, r)),
    ];
    for (scale_dir, train_n) in [("en", 1000usize), ("en-10k", 10_000usize)] {
        let dir = root.join("qa").join(scale_dir);
        fs::create_dir_all(&dir)?;
        for (i, (name, gen)) in qa_tasks.iter().enumerate() {
            // distinct, documented streams per file
            let base = seed
                .wrapping_add(i as u64 * 101)
                .wrapping_add(if scale_dir == "en" { 0 } else { 7919 });
            // task 17 uses 8 questions per story; round 10k down to a multiple
            let train_n = if name.contains("qa17") {
                train_n / 8 * 8
            } else {
                train_n
            };
            let test_n = if name.contains("qa17") { 1000 / 8 * 8 } else { 1000 };
            let mut rng = ChaCha20Rng::seed_from_u64(base);
            fs::write(dir.join(format!("{name}_train.txt")), gen(train_n, &mut rng))?;
            let mut rng = ChaCha20Rng::seed_from_u64(base.wrapping_add(1));
            fs::write(dir.join(format!("{name}_test.txt")), gen(test_n, &mut rng))?;
        }
    }

    let dialog_dir = root.join("dialog");
    fs::create_dir_all(&dialog_dir)?;
    fs::write(
        dialog_dir.join("dialog-babi-candidates.txt"),
        gen_dialog_candidates(),
    )?;
    fs::write(dialog_dir.join("dialog-babi-kb.txt"), gen_dialog_kb(seed))?;
    for (split, dialogs, oov, offset) in [
        ("trn", 1000usize, false, 11u64),
        ("dev", 200, false, 13),
        ("tst", 200, false, 17),
        ("tst-OOV", 200, true, 19),
    ] {
        let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(offset));
        fs::write(
            dialog_dir.join(format!("dialog-babi-task1-API-calls-{split}.txt")),
            gen_dialog_task1(dialogs, oov, &mut rng),
        )?;
    }
    Ok(())
}
