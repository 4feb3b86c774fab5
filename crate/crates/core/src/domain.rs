//! Dialogue-task vocabulary: slots, dialogue acts, user goals and the goal
//! corpus with its three difficulty tiers.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::user_sim::KnowledgeBase;

/// Distinguished value carried by request-style acts.
pub const UNK: &str = "UNK";

/// Default tier sizes (simple, medium, difficult).
pub const DEFAULT_TIER_SIZES: (usize, usize, usize) = (30, 72, 26);

/// Index of a slot within an [`Ontology`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotSpec {
    pub name: String,
    pub values: Vec<String>,
}

/// Fixed set of informable/requestable slots with their value vocabularies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    slots: Vec<SlotSpec>,
}

impl Ontology {
    pub fn new(slots: Vec<SlotSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &slots {
            if !seen.insert(s.name.as_str()) {
                return Err(Error::Validation(format!("duplicate slot name {:?}", s.name)));
            }
            if s.values.is_empty() {
                return Err(Error::Validation(format!("slot {:?} has no values", s.name)));
            }
        }
        Ok(Self { slots })
    }

    /// The nine-slot movie-ticket ontology.
    pub fn movie_booking() -> Self {
        fn spec(name: &str, values: &[&str]) -> SlotSpec {
            SlotSpec {
                name: name.to_string(),
                values: values.iter().map(|v| v.to_string()).collect(),
            }
        }
        Self {
            slots: vec![
                spec(
                    "movie_name",
                    &[
                        "zootopia",
                        "deadpool",
                        "the witch",
                        "london has fallen",
                        "kung fu panda 3",
                        "race",
                        "risen",
                        "hail caesar",
                        "the revenant",
                        "gods of egypt",
                    ],
                ),
                spec(
                    "theater",
                    &[
                        "amc pacific place",
                        "regal meridian",
                        "cinemark lincoln",
                        "ipic",
                        "carmike 12",
                        "century 16",
                    ],
                ),
                spec("city", &["seattle", "bellevue", "portland", "san francisco"]),
                spec("date", &["today", "tomorrow", "friday", "saturday", "sunday"]),
                spec(
                    "start_time",
                    &["11:00am", "1:00pm", "3:30pm", "5:00pm", "6:45pm", "7:30pm", "9:00pm", "10:15pm"],
                ),
                spec("num_tickets", &["1", "2", "3", "4"]),
                spec("price", &["$8", "$10", "$12", "$15", "$20"]),
                spec("genre", &["comedy", "action", "drama", "thriller", "animation"]),
                spec("rating", &["g", "pg", "pg-13", "r"]),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot_ids(&self) -> impl Iterator<Item = SlotId> + '_ {
        (0..self.slots.len()).map(SlotId)
    }

    pub fn name(&self, slot: SlotId) -> &str {
        &self.slots[slot.0].name
    }

    pub fn values(&self, slot: SlotId) -> &[String] {
        &self.slots[slot.0].values
    }

    pub fn slot(&self, name: &str) -> Option<SlotId> {
        self.slots.iter().position(|s| s.name == name).map(SlotId)
    }

    pub fn contains(&self, slot: SlotId) -> bool {
        slot.0 < self.slots.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    User,
    System,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActType {
    Request,
    Inform,
    ConfirmQuestion,
    ConfirmAnswer,
    Deny,
    Thanks,
    Closing,
    Greeting,
    NotSure,
    MultipleChoice,
    Book,
}

impl ActType {
    pub const ALL: [ActType; 11] = [
        ActType::Request,
        ActType::Inform,
        ActType::ConfirmQuestion,
        ActType::ConfirmAnswer,
        ActType::Deny,
        ActType::Thanks,
        ActType::Closing,
        ActType::Greeting,
        ActType::NotSure,
        ActType::MultipleChoice,
        ActType::Book,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ActType::Request => "request",
            ActType::Inform => "inform",
            ActType::ConfirmQuestion => "confirm_question",
            ActType::ConfirmAnswer => "confirm_answer",
            ActType::Deny => "deny",
            ActType::Thanks => "thanks",
            ActType::Closing => "closing",
            ActType::Greeting => "greeting",
            ActType::NotSure => "not_sure",
            ActType::MultipleChoice => "multiple_choice",
            ActType::Book => "book",
        }
    }
}

impl fmt::Display for ActType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SlotValue {
    Unk,
    Value(String),
}

impl SlotValue {
    pub fn as_str(&self) -> &str {
        match self {
            SlotValue::Unk => UNK,
            SlotValue::Value(v) => v,
        }
    }
}

/// A typed dialogue act with its slot payload.
///
/// Request acts only ever carry [`SlotValue::Unk`]; inform acts only carry
/// concrete values. Both constructors enforce that by construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DialogueAct {
    pub actor: Actor,
    pub act_type: ActType,
    pub payload: BTreeMap<SlotId, SlotValue>,
}

impl DialogueAct {
    pub fn bare(actor: Actor, act_type: ActType) -> Self {
        Self {
            actor,
            act_type,
            payload: BTreeMap::new(),
        }
    }

    pub fn request(actor: Actor, slots: impl IntoIterator<Item = SlotId>) -> Self {
        Self {
            actor,
            act_type: ActType::Request,
            payload: slots.into_iter().map(|s| (s, SlotValue::Unk)).collect(),
        }
    }

    pub fn inform(actor: Actor, pairs: impl IntoIterator<Item = (SlotId, String)>) -> Self {
        Self::with_values(actor, ActType::Inform, pairs)
    }

    pub fn with_values(
        actor: Actor,
        act_type: ActType,
        pairs: impl IntoIterator<Item = (SlotId, String)>,
    ) -> Self {
        Self {
            actor,
            act_type,
            payload: pairs.into_iter().map(|(s, v)| (s, SlotValue::Value(v))).collect(),
        }
    }

    pub fn with_unk(actor: Actor, act_type: ActType, slots: impl IntoIterator<Item = SlotId>) -> Self {
        Self {
            actor,
            act_type,
            payload: slots.into_iter().map(|s| (s, SlotValue::Unk)).collect(),
        }
    }

    pub fn slots(&self) -> impl Iterator<Item = SlotId> + '_ {
        self.payload.keys().copied()
    }

    pub fn value(&self, slot: SlotId) -> Option<&str> {
        match self.payload.get(&slot) {
            Some(SlotValue::Value(v)) => Some(v),
            _ => None,
        }
    }

    /// Checks the request/inform payload invariant.
    pub fn is_well_formed(&self) -> bool {
        match self.act_type {
            ActType::Request => self.payload.values().all(|v| *v == SlotValue::Unk),
            ActType::Inform => self.payload.values().all(|v| matches!(v, SlotValue::Value(_))),
            _ => true,
        }
    }

    /// Renders as `act(slot=value, ...)` using the ontology's slot names.
    pub fn render(&self, ontology: &Ontology) -> String {
        let args: Vec<String> = self
            .payload
            .iter()
            .map(|(s, v)| match v {
                SlotValue::Unk => ontology.name(*s).to_string(),
                SlotValue::Value(v) => format!("{}={}", ontology.name(*s), v),
            })
            .collect();
        format!("{}({})", self.act_type, args.join(", "))
    }
}

/// One dialogue task: the user's constraints plus what they want to learn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserGoal {
    id: u32,
    inform_slots: BTreeMap<SlotId, String>,
    request_slots: BTreeSet<SlotId>,
    difficulty: usize,
}

impl UserGoal {
    pub fn new(
        id: u32,
        inform_slots: BTreeMap<SlotId, String>,
        request_slots: BTreeSet<SlotId>,
    ) -> Result<Self> {
        if request_slots.is_empty() {
            return Err(Error::Validation(format!("goal {id}: request_slots is empty")));
        }
        if let Some(s) = request_slots.iter().find(|s| inform_slots.contains_key(s)) {
            return Err(Error::Validation(format!(
                "goal {id}: slot #{} is both informed and requested",
                s.0
            )));
        }
        let difficulty = inform_slots.len() + request_slots.len();
        Ok(Self {
            id,
            inform_slots,
            request_slots,
            difficulty,
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn inform_slots(&self) -> &BTreeMap<SlotId, String> {
        &self.inform_slots
    }

    pub fn request_slots(&self) -> &BTreeSet<SlotId> {
        &self.request_slots
    }

    pub fn difficulty(&self) -> usize {
        self.difficulty
    }
}

/// `n = n_i + n_r`.
pub fn difficulty_of(goal: &UserGoal) -> usize {
    goal.inform_slots.len() + goal.request_slots.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Simple,
    Medium,
    Difficult,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Simple, Tier::Medium, Tier::Difficult];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Tier::Simple => "simple",
            Tier::Medium => "medium",
            Tier::Difficult => "difficult",
        }
    }

    pub fn next(self) -> Option<Tier> {
        match self {
            Tier::Simple => Some(Tier::Medium),
            Tier::Medium => Some(Tier::Difficult),
            Tier::Difficult => None,
        }
    }
}

/// Ordered goals plus their difficulty partition.
///
/// Tiers hold positions into `goals`, not goal ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoalCorpus {
    goals: Vec<UserGoal>,
    tiers: [Vec<usize>; 3],
    tier_of: Vec<Tier>,
}

impl GoalCorpus {
    pub fn goals(&self) -> &[UserGoal] {
        &self.goals
    }

    pub fn len(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }

    pub fn goal(&self, pos: usize) -> &UserGoal {
        &self.goals[pos]
    }

    pub fn tier(&self, tier: Tier) -> &[usize] {
        &self.tiers[tier.index()]
    }

    pub fn tier_of(&self, pos: usize) -> Tier {
        self.tier_of[pos]
    }

    pub fn tier_sizes(&self) -> (usize, usize, usize) {
        (self.tiers[0].len(), self.tiers[1].len(), self.tiers[2].len())
    }

    pub fn position_of(&self, id: u32) -> Option<usize> {
        self.goals.iter().position(|g| g.id == id)
    }

    /// Re-partitions the same goals with different tier sizes.
    pub fn with_sizes(self, sizes: (usize, usize, usize)) -> Result<Self> {
        partition_corpus(self.goals, sizes)
    }
}

fn check_unique_ids(goals: &[UserGoal]) -> Result<()> {
    let mut seen = HashSet::new();
    for g in goals {
        if !seen.insert(g.id) {
            return Err(Error::Validation(format!("duplicate goal id {}", g.id)));
        }
    }
    Ok(())
}

fn partition_unchecked(goals: Vec<UserGoal>, sizes: (usize, usize, usize)) -> GoalCorpus {
    let mut order: Vec<usize> = (0..goals.len()).collect();
    order.sort_by_key(|&i| (goals[i].difficulty, goals[i].id));
    let simple = order[..sizes.0].to_vec();
    let medium = order[sizes.0..sizes.0 + sizes.1].to_vec();
    let difficult = order[sizes.0 + sizes.1..].to_vec();
    let mut tier_of = vec![Tier::Simple; goals.len()];
    for &i in &medium {
        tier_of[i] = Tier::Medium;
    }
    for &i in &difficult {
        tier_of[i] = Tier::Difficult;
    }
    GoalCorpus {
        goals,
        tiers: [simple, medium, difficult],
        tier_of,
    }
}

/// Sorts by `(difficulty, id)` and cuts into simple/medium/difficult tiers.
pub fn partition_corpus(goals: Vec<UserGoal>, sizes: (usize, usize, usize)) -> Result<GoalCorpus> {
    let (a, b, c) = sizes;
    if a == 0 || b == 0 || c == 0 {
        return Err(Error::Corpus(format!("tier sizes must be >= 1, got {a},{b},{c}")));
    }
    if a + b + c != goals.len() {
        return Err(Error::Corpus(format!(
            "tier sizes {a}+{b}+{c} != {} goals",
            goals.len()
        )));
    }
    check_unique_ids(&goals)?;
    Ok(partition_unchecked(goals, sizes))
}

/// Tier sizes proportional to the default 30/72/26 split.
pub fn default_sizes(n: usize) -> (usize, usize, usize) {
    let (a, b, c) = DEFAULT_TIER_SIZES;
    let total = a + b + c;
    if n == total {
        return DEFAULT_TIER_SIZES;
    }
    if n < 3 {
        return (n, 0, 0);
    }
    let simple = ((n * a) as f64 / total as f64).round().max(1.0) as usize;
    let medium = ((n * b) as f64 / total as f64).round().max(1.0) as usize;
    let simple = simple.min(n - 2);
    let medium = medium.min(n - simple - 1);
    (simple, medium, n - simple - medium)
}

/// Inclusive difficulty band for each tier, clamped to the ontology size.
pub fn tier_band(tier: Tier, n_slots: usize) -> (usize, usize) {
    let (lo, hi) = match tier {
        Tier::Simple => (2, 4),
        Tier::Medium => (4, 7),
        Tier::Difficult => (7, 12),
    };
    (lo, hi.min(n_slots))
}

/// Seeded synthetic corpus whose goals are all satisfiable against `kb`.
pub fn generate_corpus(seed: u64, sizes: (usize, usize, usize), kb: &KnowledgeBase) -> Result<GoalCorpus> {
    let ontology = kb.ontology();
    let n_slots = ontology.len();
    if sizes.0 == 0 || sizes.1 == 0 || sizes.2 == 0 {
        return Err(Error::Generation(format!("tier sizes must be >= 1, got {sizes:?}")));
    }
    if n_slots < tier_band(Tier::Difficult, usize::MAX).0 {
        return Err(Error::Generation(format!(
            "ontology has {n_slots} slots; difficult goals need at least 7"
        )));
    }
    if kb.is_empty() {
        return Err(Error::Generation("knowledge base has no rows".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drafts = Vec::with_capacity(sizes.0 + sizes.1 + sizes.2);
    for (tier, count) in Tier::ALL.into_iter().zip([sizes.0, sizes.1, sizes.2]) {
        let (lo, hi) = tier_band(tier, n_slots);
        for _ in 0..count {
            let difficulty = rng.random_range(lo..=hi);
            let n_request = rng.random_range(1..=difficulty.min(3));
            let n_inform = difficulty - n_request;
            let mut slots: Vec<SlotId> = ontology.slot_ids().collect();
            slots.shuffle(&mut rng);
            let row = kb.row(rng.random_range(0..kb.len()));
            let inform: BTreeMap<SlotId, String> = slots[..n_inform]
                .iter()
                .map(|&s| (s, row[s.0].clone()))
                .collect();
            let request: BTreeSet<SlotId> = slots[n_inform..n_inform + n_request].iter().copied().collect();
            drafts.push((inform, request));
        }
    }
    drafts.shuffle(&mut rng);
    let goals = drafts
        .into_iter()
        .enumerate()
        .map(|(id, (inform, request))| UserGoal::new(id as u32, inform, request))
        .collect::<Result<Vec<_>>>()?;
    partition_corpus(goals, sizes)
}

#[derive(Debug, Serialize, Deserialize)]
struct GoalRecord {
    id: u32,
    inform_slots: BTreeMap<String, String>,
    request_slots: Vec<String>,
}

pub fn save_corpus(corpus: &GoalCorpus, ontology: &Ontology, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for g in &corpus.goals {
        let record = GoalRecord {
            id: g.id,
            inform_slots: g
                .inform_slots
                .iter()
                .map(|(s, v)| (ontology.name(*s).to_string(), v.clone()))
                .collect(),
            request_slots: g.request_slots.iter().map(|s| ontology.name(*s).to_string()).collect(),
        };
        serde_json::to_writer(&mut out, &record).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Loads goals and partitions them with [`default_sizes`].
pub fn load_corpus(path: &Path, ontology: &Ontology) -> Result<GoalCorpus> {
    let goals = load_goals(path, ontology)?;
    let sizes = default_sizes(goals.len());
    Ok(partition_unchecked(goals, sizes))
}

pub fn load_goals(path: &Path, ontology: &Ontology) -> Result<Vec<UserGoal>> {
    let reader = BufReader::new(File::open(path)?);
    let mut goals = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        let record: GoalRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let lookup = |name: &str| {
            ontology
                .slot(name)
                .ok_or_else(|| parse_err(format!("unknown slot {name:?}")))
        };
        let mut inform = BTreeMap::new();
        for (name, value) in record.inform_slots {
            inform.insert(lookup(&name)?, value);
        }
        let mut request = BTreeSet::new();
        for name in &record.request_slots {
            request.insert(lookup(name)?);
        }
        if !seen.insert(record.id) {
            return Err(Error::Validation(format!(
                "duplicate goal id {} at line {lineno}",
                record.id
            )));
        }
        let goal = UserGoal::new(record.id, inform, request).map_err(|e| parse_err(e.to_string()))?;
        goals.push(goal);
    }
    Ok(goals)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn goal(id: u32, n_inform: usize, n_request: usize) -> UserGoal {
        let inform = (0..n_inform).map(|i| (SlotId(i), format!("v{i}"))).collect();
        let request = (n_inform..n_inform + n_request).map(SlotId).collect();
        UserGoal::new(id, inform, request).unwrap()
    }

    #[test]
    fn difficulty_is_direct_sum() {
        assert_eq!(difficulty_of(&goal(0, 3, 2)), 5);
        assert_eq!(difficulty_of(&goal(0, 0, 1)), 1);
        assert_eq!(difficulty_of(&goal(0, 6, 3)), 9);
        assert_eq!(goal(0, 6, 3).difficulty(), 9);
    }

    #[test]
    fn goal_rejects_overlap_and_empty_requests() {
        let inform: BTreeMap<_, _> = [(SlotId(0), "x".to_string())].into();
        assert!(UserGoal::new(1, inform.clone(), BTreeSet::new()).is_err());
        assert!(UserGoal::new(1, inform, [SlotId(0)].into()).is_err());
    }

    #[test]
    fn one_goal_per_tier() {
        let goals = vec![goal(0, 8, 1), goal(1, 0, 1), goal(2, 3, 2)];
        let c = partition_corpus(goals, (1, 1, 1)).unwrap();
        assert_eq!(c.goal(c.tier(Tier::Simple)[0]).difficulty(), 1);
        assert_eq!(c.goal(c.tier(Tier::Medium)[0]).difficulty(), 5);
        assert_eq!(c.goal(c.tier(Tier::Difficult)[0]).difficulty(), 9);
    }

    #[test]
    fn ties_broken_by_ascending_id() {
        let goals = vec![goal(9, 2, 1), goal(4, 2, 1), goal(7, 2, 1), goal(1, 2, 1)];
        // Oracle: stable sort of ids (all difficulties equal).
        let mut oracle: Vec<u32> = goals.iter().map(|g| g.id()).collect();
        oracle.sort();
        let c = partition_corpus(goals, (2, 1, 1)).unwrap();
        let ids = |t| c.tier(t).iter().map(|&p| c.goal(p).id()).collect::<Vec<_>>();
        assert_eq!(ids(Tier::Simple), oracle[..2]);
        assert_eq!(ids(Tier::Medium), oracle[2..3]);
        assert_eq!(ids(Tier::Difficult), oracle[3..]);
    }

    #[test]
    fn size_mismatch_is_error() {
        let goals = vec![goal(0, 1, 1), goal(1, 1, 1)];
        assert!(matches!(partition_corpus(goals.clone(), (1, 1, 1)), Err(Error::Corpus(_))));
        assert!(matches!(partition_corpus(goals, (2, 0, 0)), Err(Error::Corpus(_))));
    }

    #[test]
    fn default_sizes_match_reference_split() {
        assert_eq!(default_sizes(128), (30, 72, 26));
        let (a, b, c) = default_sizes(10);
        assert_eq!(a + b + c, 10);
        assert!(a >= 1 && b >= 1 && c >= 1);
        assert_eq!(default_sizes(0), (0, 0, 0));
    }

    #[test]
    fn act_constructors_respect_payload_invariant() {
        let r = DialogueAct::request(Actor::User, [SlotId(1), SlotId(2)]);
        assert!(r.is_well_formed());
        assert!(r.payload.values().all(|v| *v == SlotValue::Unk));
        let i = DialogueAct::inform(Actor::System, [(SlotId(1), "x".to_string())]);
        assert!(i.is_well_formed());
        assert_eq!(i.value(SlotId(1)), Some("x"));
        assert_eq!(ActType::ALL.len(), 11);
        for (i, a) in ActType::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
        }
    }

    #[test]
    fn render_uses_slot_names() {
        let o = Ontology::movie_booking();
        let city = o.slot("city").unwrap();
        let act = DialogueAct::inform(Actor::User, [(city, "seattle".into())]);
        assert_eq!(act.render(&o), "inform(city=seattle)");
        assert_eq!(DialogueAct::request(Actor::User, [city]).render(&o), "request(city)");
    }
}
