//! High-level goal finding: an interleaved text/image prompt over the whole
//! tour, a pluggable model client, and parsing of the returned frame number.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::geometry::Pose2;
use crate::localization::QueryObservation;
use crate::sim::{InstructionTag, World};
use crate::tour::Tour;

const PREAMBLE: [&str; 2] = [
    "You are a robot operating in a building and your task is to respond to the user command about going to a specific location by finding the closest frame in the tour video to navigate to.",
    "These frames are from the tour of the building last year.",
];
const CURRENT_VIEW: &str = "This image is what you see now. You may or may not see the user in this image.";
const GOAL_QUESTION: &str = "How would you respond? Can you find the closest frame?";
const ACTION_QUESTION: &str = "Could you select and answer the most appropriate action to take now among 'left', 'forward' and 'right', which correspond to respectively? Answer:";

#[derive(Debug, thiserror::Error)]
pub enum VlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no scripted response matches instruction {0:?}")]
    NoScript(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GoalFinderError {
    #[error("instruction has no image; descriptor retrieval needs one")]
    UnsupportedInstruction,
    #[error("tour is empty")]
    EmptyTour,
}

/// A user request: text, optionally with an image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub image: Option<QueryObservation>,
}

impl Instruction {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            image: None,
        }
    }

    pub fn with_image(text: impl Into<String>, image: QueryObservation) -> Self {
        Self {
            text: text.into(),
            image: Some(image),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PromptPart {
    Text { text: String },
    /// `frame_index` numbers the frame as the model sees it; `source_index`
    /// is the full-rate tour frame behind it.
    FrameImage {
        frame_index: usize,
        #[serde(skip_serializing)]
        source_index: usize,
    },
    InstructionImage,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Prompt {
    pub parts: Vec<PromptPart>,
}

impl Prompt {
    fn text(&mut self, s: impl Into<String>) {
        self.parts.push(PromptPart::Text { text: s.into() });
    }

    /// One line per part; images appear as bracketed placeholders.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for part in &self.parts {
            match part {
                PromptPart::Text { text } => out.push_str(text),
                PromptPart::FrameImage { frame_index, .. } => {
                    out.push_str(&format!("[Frame {frame_index} Image]"))
                }
                PromptPart::InstructionImage => out.push_str("[Image Instruction]"),
            }
            out.push('\n');
        }
        out
    }

    pub fn frame_refs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parts.iter().filter_map(|p| match p {
            PromptPart::FrameImage {
                frame_index,
                source_index,
            } => Some((*frame_index, *source_index)),
            _ => None,
        })
    }

    pub fn has_instruction_image(&self) -> bool {
        self.parts.contains(&PromptPart::InstructionImage)
    }

    /// Request body of the remote model contract.
    pub fn wire_request(&self, model: &str, max_tokens: u32) -> serde_json::Value {
        serde_json::json!({
            "model": model,
            "parts": self.parts,
            "max_tokens": max_tokens,
        })
    }
}

fn interleaved(tour: &Tour, instr: &Instruction, question: &str) -> Prompt {
    let mut p = Prompt::default();
    for line in PREAMBLE {
        p.text(line);
    }
    for (i, f) in tour.frames().iter().enumerate() {
        p.parts.push(PromptPart::FrameImage {
            frame_index: f.index,
            source_index: tour.source_indices()[i],
        });
        match &f.narrative {
            Some(n) => p.text(format!("Frame {}. {n}", f.index)),
            None => p.text(format!("Frame {}.", f.index)),
        }
    }
    if instr.image.is_some() {
        p.text(CURRENT_VIEW);
        p.parts.push(PromptPart::InstructionImage);
    }
    p.text(format!("The user says: {}", instr.text));
    p.text(question);
    p
}

/// Prompt asking the model for the tour frame closest to the goal.
pub fn build_goal_prompt(tour: &Tour, instr: &Instruction) -> Prompt {
    interleaved(tour, instr, GOAL_QUESTION)
}

/// Same context, but asking directly for a discrete motion.
pub fn build_action_prompt(tour: &Tour, instr: &Instruction) -> Prompt {
    interleaved(tour, instr, ACTION_QUESTION)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    Refusal,
    Ambiguous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalDecision {
    pub goal_index: Option<usize>,
    pub raw_response: String,
    pub parse_status: ParseStatus,
    /// Queries spent, including retries.
    #[serde(default)]
    pub attempts: usize,
}

fn frame_mention() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b[Ff]rame\s+(\d+)").expect("valid regex"))
}

fn bare_integer() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+)\s*\.?\s*$").expect("valid regex"))
}

/// The last "Frame N" mention wins; a response that is only an integer is
/// taken as is. Indices outside `1..=tour_len` are ambiguous.
pub fn parse_goal(response: &str, tour_len: usize) -> GoalDecision {
    let digits = frame_mention()
        .captures_iter(response)
        .last()
        .or_else(|| bare_integer().captures(response))
        .map(|c| c[1].to_string());
    let decision = |goal_index, parse_status| GoalDecision {
        goal_index,
        raw_response: response.to_string(),
        parse_status,
        attempts: 1,
    };
    match digits.map(|d| d.parse::<usize>()) {
        None => decision(None, ParseStatus::Refusal),
        Some(Ok(i)) if (1..=tour_len).contains(&i) => decision(Some(i), ParseStatus::Ok),
        Some(_) => decision(None, ParseStatus::Ambiguous),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscreteAction {
    Left,
    Forward,
    Right,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionDecision {
    pub action: Option<DiscreteAction>,
    pub raw_response: String,
    pub parse_status: ParseStatus,
}

/// Exactly one of the three action words must appear.
pub fn parse_action(response: &str) -> ActionDecision {
    let lower = response.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    let mut found = Vec::new();
    for (word, action) in [
        ("left", DiscreteAction::Left),
        ("forward", DiscreteAction::Forward),
        ("right", DiscreteAction::Right),
    ] {
        if words.contains(&word) {
            found.push(action);
        }
    }
    let (action, parse_status) = match found.as_slice() {
        [one] => (Some(*one), ParseStatus::Ok),
        [] if words.is_empty() => (None, ParseStatus::Refusal),
        _ => (None, ParseStatus::Ambiguous),
    };
    ActionDecision {
        action,
        raw_response: response.to_string(),
        parse_status,
    }
}

/// A multimodal model behind some transport.
pub trait VlmClient: Send + Sync {
    fn query(&self, prompt: &Prompt, instruction: &Instruction) -> Result<String, VlmError>;
}

/// Answers from simulator ground truth: the prompt frame closest to the
/// tagged goal pose.
pub struct OracleClient {
    tags: Vec<InstructionTag>,
    poses: HashMap<usize, Pose2>,
}

impl OracleClient {
    /// `tour` must be the full-rate tour the prompts are built from.
    pub fn new(world: &World, tour: &Tour) -> Self {
        Self {
            tags: world.instruction_tags.clone(),
            poses: tour
                .frames()
                .iter()
                .zip(tour.source_indices())
                .filter_map(|(f, &s)| f.pose.map(|p| (s, p)))
                .collect(),
        }
    }
}

impl VlmClient for OracleClient {
    fn query(&self, prompt: &Prompt, instruction: &Instruction) -> Result<String, VlmError> {
        let Some(tag) = self.tags.iter().find(|t| t.instruction == instruction.text) else {
            return Ok("I do not know where that is.".to_string());
        };
        let best = prompt
            .frame_refs()
            .filter_map(|(shown, source)| self.poses.get(&source).map(|p| (p.distance(&tag.goal_pose), shown)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(match best {
            Some((_, shown)) => format!("Frame {shown}"),
            None => "I do not know where that is.".to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    /// Substring of the instruction text this entry answers.
    #[serde(rename = "match")]
    pub pattern: String,
    pub response: String,
}

/// Canned responses. Each query consumes the next unused entry matching the
/// instruction; once they run out the last matching entry repeats.
pub struct ScriptedClient {
    entries: Vec<ScriptEntry>,
    used: Mutex<Vec<bool>>,
}

impl ScriptedClient {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        let used = Mutex::new(vec![false; entries.len()]);
        Self { entries, used }
    }

    pub fn load(path: &Path) -> Result<Self, VlmError> {
        let text = fs::read_to_string(path).map_err(|source| VlmError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(line).map_err(|e| VlmError::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self::new(entries))
    }
}

impl VlmClient for ScriptedClient {
    fn query(&self, _prompt: &Prompt, instruction: &Instruction) -> Result<String, VlmError> {
        let mut used = self.used.lock().expect("script cursor poisoned");
        let mut last = None;
        for (i, e) in self.entries.iter().enumerate() {
            if instruction.text.contains(&e.pattern) {
                if !used[i] {
                    used[i] = true;
                    return Ok(e.response.clone());
                }
                last = Some(i);
            }
        }
        last.map(|i| self.entries[i].response.clone())
            .ok_or_else(|| VlmError::NoScript(instruction.text.clone()))
    }
}

#[cfg(feature = "remote")]
pub use remote::RemoteClient;

#[cfg(feature = "remote")]
mod remote {
    use std::time::Duration;

    use super::{Instruction, Prompt, VlmClient, VlmError};

    /// JSON-over-HTTP client: POSTs `{model, parts, max_tokens}` and expects
    /// `{text}` back.
    pub struct RemoteClient {
        url: String,
        model: String,
        max_tokens: u32,
        retries: usize,
        agent: ureq::Agent,
    }

    #[derive(serde::Deserialize)]
    struct Reply {
        text: String,
    }

    impl RemoteClient {
        pub fn new(url: impl Into<String>, model: impl Into<String>, timeout: Duration, retries: usize) -> Self {
            let agent = ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .build()
                .into();
            Self {
                url: url.into(),
                model: model.into(),
                max_tokens: 1024,
                retries,
                agent,
            }
        }

        fn send(&self, body: &serde_json::Value) -> Result<String, VlmError> {
            let mut resp = self
                .agent
                .post(&self.url)
                .send_json(body)
                .map_err(|e| VlmError::Transport(e.to_string()))?;
            let reply: Reply = resp
                .body_mut()
                .read_json()
                .map_err(|e| VlmError::Transport(format!("bad response body: {e}")))?;
            Ok(reply.text)
        }
    }

    impl VlmClient for RemoteClient {
        fn query(&self, prompt: &Prompt, _instruction: &Instruction) -> Result<String, VlmError> {
            let body = prompt.wire_request(&self.model, self.max_tokens);
            let mut last = None;
            for _ in 0..=self.retries {
                match self.send(&body) {
                    Ok(text) => return Ok(text),
                    Err(e) => last = Some(e),
                }
            }
            Err(last.expect("at least one attempt"))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GoalFinderConfig {
    /// Extra queries after a refusal, ambiguous answer or transport error.
    pub retries: usize,
    /// Frame rate the tour is reduced to before prompting; `None` keeps all frames.
    pub fps: Option<f64>,
}

impl Default for GoalFinderConfig {
    fn default() -> Self {
        Self {
            retries: 2,
            fps: None,
        }
    }
}

fn prompt_view(tour: &Tour, fps: Option<f64>) -> Tour {
    match fps {
        Some(rate) if rate > 0.0 && rate < tour.fps() => tour.subsample(rate).expect("rate checked"),
        _ => tour.clone(),
    }
}

/// Queries `client` with the goal prompt and returns a full-rate frame index.
pub fn find_goal(
    client: &dyn VlmClient,
    tour: &Tour,
    instr: &Instruction,
    cfg: &GoalFinderConfig,
) -> Result<GoalDecision, VlmError> {
    let view = prompt_view(tour, cfg.fps);
    let prompt = build_goal_prompt(&view, instr);
    let mut last_decision: Option<GoalDecision> = None;
    let mut last_error = None;
    for attempt in 1..=cfg.retries + 1 {
        match client.query(&prompt, instr) {
            Ok(response) => {
                let mut d = parse_goal(&response, view.len());
                d.attempts = attempt;
                if let Some(i) = d.goal_index {
                    d.goal_index = view.to_source_index(i);
                    return Ok(d);
                }
                last_decision = Some(d);
            }
            Err(e) => last_error = Some(e),
        }
    }
    match (last_decision, last_error) {
        (Some(d), _) => Ok(d),
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("at least one attempt"),
    }
}

/// Direct-action variant used for the no-graph ablation.
pub fn find_action(
    client: &dyn VlmClient,
    tour: &Tour,
    instr: &Instruction,
    cfg: &GoalFinderConfig,
) -> Result<ActionDecision, VlmError> {
    let view = prompt_view(tour, cfg.fps);
    let prompt = build_action_prompt(&view, instr);
    let mut last_decision = None;
    let mut last_error = None;
    for _ in 0..=cfg.retries {
        match client.query(&prompt, instr) {
            Ok(r) => {
                let d = parse_action(&r);
                if d.action.is_some() {
                    return Ok(d);
                }
                last_decision = Some(d);
            }
            Err(e) => last_error = Some(e),
        }
    }
    last_decision.ok_or_else(|| last_error.expect("at least one attempt"))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Baseline: the tour frame whose descriptor is most similar to the
/// instruction image's. Ties go to the smaller index.
pub fn retrieve_goal_baseline(tour: &Tour, instr: &Instruction) -> Result<usize, GoalFinderError> {
    let image = instr.image.as_ref().ok_or(GoalFinderError::UnsupportedInstruction)?;
    tour.frames()
        .iter()
        .map(|f| (cosine(&f.descriptor, &image.descriptor), f.index))
        .fold(None, |best: Option<(f64, usize)>, cur| match best {
            Some(b) if b.0 >= cur.0 => Some(b),
            _ => Some(cur),
        })
        .map(|(_, i)| i)
        .ok_or(GoalFinderError::EmptyTour)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tour::tests::synthetic_frames;

    fn tour(n: usize) -> Tour {
        Tour::new(synthetic_frames(n, 4), 1.0, 4).unwrap()
    }

    fn scripted(lines: &[(&str, &str)]) -> ScriptedClient {
        ScriptedClient::new(
            lines
                .iter()
                .map(|(m, r)| ScriptEntry {
                    pattern: m.to_string(),
                    response: r.to_string(),
                })
                .collect(),
        )
    }

    #[test]
    fn prompt_structure() {
        let p = build_goal_prompt(&tour(2), &Instruction::text("Take me to the exit"));
        assert_eq!(p.frame_refs().count(), 2);
        assert!(!p.has_instruction_image());
        let t = tour(948).attach_narrative(434, "Lewis' desk").unwrap();
        let img = QueryObservation {
            descriptor: vec![1.0, 0.0, 0.0, 0.0],
            observations: vec![],
        };
        let p = build_goal_prompt(&t, &Instruction::with_image("Where should I return this?", img));
        let text = p.render();
        assert!(text.contains("\nFrame 434. Lewis' desk\n"));
        assert!(text.ends_with("The user says: Where should I return this?\nHow would you respond? Can you find the closest frame?\n"));
        assert!(p.has_instruction_image());
        let indices: Vec<usize> = p.frame_refs().map(|(i, _)| i).collect();
        assert!(indices.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn wire_format() {
        let t = tour(3).subsample(0.5).unwrap();
        let p = build_goal_prompt(&t, &Instruction::text("hi"));
        let body = p.wire_request("some-model", 256);
        assert_eq!(body["model"], "some-model");
        assert_eq!(body["max_tokens"], 256);
        assert_eq!(body["parts"][0], serde_json::json!({"type": "text", "text": PREAMBLE[0]}));
        assert_eq!(body["parts"][2], serde_json::json!({"type": "frame_image", "frame_index": 1}));
        assert_eq!(body["parts"][4], serde_json::json!({"type": "frame_image", "frame_index": 2}));
    }

    #[test]
    fn parse_examples() {
        let d = parse_goal("Frame 222 is the closest frame as it shows the same refrigerator", 948);
        assert_eq!((d.goal_index, d.parse_status), (Some(222), ParseStatus::Ok));
        let d = parse_goal("42", 948);
        assert_eq!((d.goal_index, d.parse_status), (Some(42), ParseStatus::Ok));
        let d = parse_goal("I recommend checking common areas.", 948);
        assert_eq!((d.goal_index, d.parse_status), (None, ParseStatus::Refusal));
        let d = parse_goal("Frame 1200 is it", 948);
        assert_eq!(d.parse_status, ParseStatus::Ambiguous);
        assert_eq!(parse_goal("Frame 0.", 948).parse_status, ParseStatus::Ambiguous);
        assert_eq!(parse_goal("Frame 99999999999999999999999", 948).parse_status, ParseStatus::Ambiguous);
        // chain of thought: the final mention counts
        let d = parse_goal("Frame 12 looks close but frame 30 is better.", 948);
        assert_eq!(d.goal_index, Some(30));
        // numbers not tied to a frame are not goals
        assert_eq!(parse_goal("There are 3 kitchens.", 948).parse_status, ParseStatus::Refusal);
    }

    #[test]
    fn action_parsing() {
        assert_eq!(parse_action("forward").action, Some(DiscreteAction::Forward));
        assert_eq!(parse_action(" 'Left'.").action, Some(DiscreteAction::Left));
        assert_eq!(parse_action("sideways").parse_status, ParseStatus::Ambiguous);
        assert_eq!(parse_action("left or right").parse_status, ParseStatus::Ambiguous);
        assert_eq!(parse_action("").parse_status, ParseStatus::Refusal);
        let client = scripted(&[("", "forward")]);
        let d = find_action(&client, &tour(3), &Instruction::text("go"), &GoalFinderConfig::default()).unwrap();
        assert_eq!(d.action, Some(DiscreteAction::Forward));
    }

    #[test]
    fn retries_after_refusal() {
        let client = scripted(&[("kitchen", "I cannot help with that."), ("kitchen", "Frame 10")]);
        let d = find_goal(&client, &tour(20), &Instruction::text("the kitchen"), &GoalFinderConfig::default()).unwrap();
        assert_eq!(d.goal_index, Some(10));
        assert_eq!(d.attempts, 2);

        let client = scripted(&[("kitchen", "no idea")]);
        let cfg = GoalFinderConfig { retries: 3, fps: None };
        let d = find_goal(&client, &tour(20), &Instruction::text("kitchen"), &cfg).unwrap();
        assert_eq!((d.goal_index, d.parse_status, d.attempts), (None, ParseStatus::Refusal, 4));

        let err = find_goal(&client, &tour(20), &Instruction::text("garage"), &cfg).unwrap_err();
        assert!(matches!(err, VlmError::NoScript(_)));
    }

    #[test]
    fn subsampled_index_maps_back() {
        let client = scripted(&[("", "Frame 45")]);
        let cfg = GoalFinderConfig {
            retries: 0,
            fps: Some(0.2),
        };
        let d = find_goal(&client, &tour(948), &Instruction::text("x"), &cfg).unwrap();
        assert_eq!(d.goal_index, Some(221));
    }

    #[test]
    fn baseline_requires_image() {
        let t = tour(6);
        assert_eq!(
            retrieve_goal_baseline(&t, &Instruction::text("x")),
            Err(GoalFinderError::UnsupportedInstruction)
        );
        let img = QueryObservation {
            descriptor: t.frame(3).unwrap().descriptor.clone(),
            observations: vec![],
        };
        // frames 3 and 7 share a descriptor; the smaller index wins
        assert_eq!(retrieve_goal_baseline(&t, &Instruction::with_image("x", img)), Ok(3));
    }

    #[test]
    fn scripted_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.jsonl");
        fs::write(&path, "{\"match\": \"exit\", \"response\": \"Frame 3\"}\n\n{\"match\": \"desk\", \"response\": \"2\"}\n").unwrap();
        let c = ScriptedClient::load(&path).unwrap();
        let p = Prompt::default();
        assert_eq!(c.query(&p, &Instruction::text("take me to the exit")).unwrap(), "Frame 3");
        assert_eq!(c.query(&p, &Instruction::text("take me to the exit")).unwrap(), "Frame 3");
        assert_eq!(c.query(&p, &Instruction::text("my desk")).unwrap(), "2");
        fs::write(&path, "{\"match\": 1}\n").unwrap();
        assert!(matches!(ScriptedClient::load(&path), Err(VlmError::Parse { line: 1, .. })));
    }
}
