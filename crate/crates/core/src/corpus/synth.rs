//! Deterministic synthetic QFS corpora with planted evidence.
//!
//! Every meeting discusses a handful of topics. Each topic gets one or more
//! "topical" utterances built from the topic noun plus content words drawn
//! from a vocabulary owned by that topic. A query asks about one topic; its
//! reference summary is assembled from the content words of exactly the
//! topical utterances of that topic, and those utterances are the gold spans.
//! Filler chatter and passing mentions of the topic noun act as distractors.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{spans_from_indices, Corpus, DatasetSplit, Meeting, QueryInstance, SplitName};
use crate::error::{Error, Result};

pub const TOPICS: &[&str] = &[
    "budget",
    "remote",
    "battery",
    "screen",
    "marketing",
    "schedule",
    "interface",
    "color",
    "price",
    "material",
    "button",
    "speaker",
    "logo",
    "survey",
    "prototype",
    "casing",
    "display",
    "charger",
    "warranty",
    "packaging",
    "software",
    "sensor",
    "keyboard",
    "antenna",
];

pub const CONTENT_PER_TOPIC: usize = 6;

const CONSONANTS: &[u8] = b"bdfgklmnprtvz";
const VOWELS: &[u8] = b"aiou";

const FILLERS: &[&str] = &[
    "okay", "yeah", "um", "so", "right", "i", "think", "we", "maybe", "well", "sure", "mm", "hmm", "agree", "good",
    "that", "is", "fine", "let", "us", "move", "on", "next", "alright",
];

const SPEAKERS: &[&str] = &["alice", "bob", "carol", "dave"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthTask {
    /// Multi-speaker meeting transcripts.
    Meeting,
    /// Single-speaker documents with different phrasing; shares the topic
    /// and content vocabulary so it can serve as a transfer source.
    Document,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub meetings: usize,
    pub queries_per_meeting: usize,
    pub topics_per_meeting: usize,
    pub min_topic_utterances: usize,
    pub max_topic_utterances: usize,
    pub filler_utterances: usize,
    pub mention_distractors: bool,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub task: SynthTask,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            meetings: 40,
            queries_per_meeting: 3,
            topics_per_meeting: 4,
            min_topic_utterances: 1,
            max_topic_utterances: 2,
            filler_utterances: 4,
            mention_distractors: true,
            validation_fraction: 0.2,
            test_fraction: 0.2,
            task: SynthTask::Meeting,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("synth spec: {m}")));
        if self.meetings == 0 || self.queries_per_meeting == 0 || self.topics_per_meeting == 0 {
            return bad("meetings, queries_per_meeting and topics_per_meeting must be >= 1");
        }
        if self.topics_per_meeting > TOPICS.len() {
            return bad("topics_per_meeting exceeds topic inventory");
        }
        if self.queries_per_meeting > self.topics_per_meeting {
            return bad("queries_per_meeting exceeds topics_per_meeting");
        }
        if self.min_topic_utterances == 0 || self.min_topic_utterances > self.max_topic_utterances {
            return bad("need 1 <= min_topic_utterances <= max_topic_utterances");
        }
        let fractions_ok = (0.0..1.0).contains(&self.validation_fraction)
            && (0.0..1.0).contains(&self.test_fraction)
            && self.validation_fraction + self.test_fraction < 1.0;
        if !fractions_ok {
            return bad("split fractions must be in [0, 1) and sum below 1");
        }
        Ok(())
    }

    fn split_counts(&self) -> (usize, usize, usize) {
        let n = self.meetings;
        let val = (n as f64 * self.validation_fraction).round() as usize;
        let test = (n as f64 * self.test_fraction).round() as usize;
        let (val, test) = if val + test >= n { (0, 0) } else { (val, test) };
        (n - val - test, val, test)
    }
}

fn syllable(i: usize) -> String {
    let c = CONSONANTS[i % CONSONANTS.len()] as char;
    let v = VOWELS[(i / CONSONANTS.len()) % VOWELS.len()] as char;
    format!("{c}{v}")
}

/// Content word `j` of topic `t`: a two-syllable pseudo-word, distinct for
/// every `(t, j)`.
pub fn content_word(topic: usize, j: usize) -> String {
    let n = CONSONANTS.len() * VOWELS.len();
    let idx = topic * CONTENT_PER_TOPIC + j;
    let a = idx % n;
    let b = (idx / n + 7 * idx) % n;
    format!("{}{}", syllable(a), syllable(b))
}

struct TopicUtterance {
    topic: usize,
    contents: Vec<String>,
}

enum Planned {
    Topical(TopicUtterance),
    Mention(usize),
    Filler,
}

fn topical_text(task: SynthTask, topic: &str, c: &[String], rng: &mut ChaCha8Rng) -> String {
    let (a, b, d) = (&c[0], &c[1], &c[2]);
    match task {
        SynthTask::Meeting => match rng.random_range(0..3) {
            0 => format!("i think the {topic} should be {a} {b} and {d}"),
            1 => format!("we could make the {topic} {a} with {b} {d}"),
            _ => format!("for the {topic} let us go with {a} {b} {d}"),
        },
        SynthTask::Document => match rng.random_range(0..2) {
            0 => format!("the {topic} is described as {a} {b} and {d}"),
            _ => format!("reports note that the {topic} remains {a} {b} {d}"),
        },
    }
}

fn mention_text(task: SynthTask, topic: &str) -> String {
    match task {
        SynthTask::Meeting => format!("did anyone bring the notes on the {topic}"),
        SynthTask::Document => format!("see the appendix for the {topic}"),
    }
}

fn filler_text(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(4..=7);
    (0..n)
        .map(|_| *FILLERS.choose(rng).expect("non-empty"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn query_text(task: SynthTask, topic: &str, rng: &mut ChaCha8Rng) -> String {
    match task {
        SynthTask::Meeting => match rng.random_range(0..4) {
            0 => format!("What did the group decide about the {topic}?"),
            1 => format!("What was said about the {topic}?"),
            2 => format!("How did the team discuss the {topic}?"),
            _ => format!("Summarize the discussion of the {topic}."),
        },
        SynthTask::Document => format!("What does the document say about the {topic}?"),
    }
}

fn summary_text(task: SynthTask, topic: &str, contents: &[String]) -> String {
    let body = contents.join(" ");
    match task {
        SynthTask::Meeting => format!("The group agreed the {topic} needs {body}."),
        SynthTask::Document => format!("The document says the {topic} is {body}."),
    }
}

/// Generates a corpus as a pure function of `(seed, spec)`.
pub fn synth_corpus(seed: u64, spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prefix = match spec.task {
        SynthTask::Meeting => "syn",
        SynthTask::Document => "doc",
    };
    let (n_train, n_val, _) = spec.split_counts();
    let mut meetings = Vec::with_capacity(spec.meetings);
    let mut splits: Vec<DatasetSplit> = SplitName::ALL
        .iter()
        .map(|&name| DatasetSplit {
            name,
            instances: Vec::new(),
        })
        .collect();

    for mi in 0..spec.meetings {
        let meeting_id = format!("{prefix}m{mi:04}");
        let mut topic_ids: Vec<usize> = (0..TOPICS.len()).collect();
        topic_ids.shuffle(&mut rng);
        topic_ids.truncate(spec.topics_per_meeting);

        let mut plan: Vec<Planned> = Vec::new();
        for &t in &topic_ids {
            let n = rng.random_range(spec.min_topic_utterances..=spec.max_topic_utterances);
            for _ in 0..n {
                let mut pool: Vec<usize> = (0..CONTENT_PER_TOPIC).collect();
                pool.shuffle(&mut rng);
                let contents = pool[..3].iter().map(|&j| content_word(t, j)).collect();
                plan.push(Planned::Topical(TopicUtterance { topic: t, contents }));
            }
            if spec.mention_distractors && rng.random_bool(0.5) {
                plan.push(Planned::Mention(t));
            }
        }
        for _ in 0..spec.filler_utterances {
            plan.push(Planned::Filler);
        }
        plan.shuffle(&mut rng);

        let mut turns = Vec::with_capacity(plan.len());
        for p in &plan {
            let speaker = match spec.task {
                SynthTask::Meeting => SPEAKERS.choose(&mut rng).expect("non-empty").to_string(),
                SynthTask::Document => "narrator".to_string(),
            };
            let text = match p {
                Planned::Topical(u) => topical_text(spec.task, TOPICS[u.topic], &u.contents, &mut rng),
                Planned::Mention(t) => mention_text(spec.task, TOPICS[*t]),
                Planned::Filler => filler_text(&mut rng),
            };
            turns.push((speaker, text));
        }

        let split_idx = if mi < n_train {
            0
        } else if mi < n_train + n_val {
            1
        } else {
            2
        };
        let mut asked = topic_ids.clone();
        asked.shuffle(&mut rng);
        for (qi, &t) in asked.iter().take(spec.queries_per_meeting).enumerate() {
            let planted: Vec<usize> = plan
                .iter()
                .enumerate()
                .filter(|(_, p)| matches!(p, Planned::Topical(u) if u.topic == t))
                .map(|(i, _)| i)
                .collect();
            let contents: Vec<String> = planted
                .iter()
                .flat_map(|&i| match &plan[i] {
                    Planned::Topical(u) => u.contents.clone(),
                    _ => unreachable!(),
                })
                .collect();
            splits[split_idx].instances.push(QueryInstance {
                query_id: format!("{meeting_id}_q{qi}"),
                meeting_id: meeting_id.clone(),
                query: query_text(spec.task, TOPICS[t], &mut rng),
                reference_summary: summary_text(spec.task, TOPICS[t], &contents),
                gold_spans: spans_from_indices(&planted),
                query_type: None,
            });
        }
        meetings.push(Meeting::new(meeting_id, turns));
    }
    splits.retain(|s| !s.instances.is_empty());
    Corpus::new(meetings, splits)
}
