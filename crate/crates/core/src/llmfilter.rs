//! LLM pre-filter: prompt construction, chat-completion transport, label
//! parsing, binary mapping and classification metrics.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::{Error, Result};

pub const PROMPT_TEMPLATE: &str = include_str!("../assets/prompt.txt");
pub const FEW_SHOT_BLOCK: &str = include_str!("../assets/fewshot.txt");
pub const PLACEHOLDER: &str = "<conversation_text>";
const CLASSIFY_ANCHOR: &str = "Now classify this conversation:";
const RETRY_INSTRUCTION: &str = "Your previous answer did not follow the output format. \
Return EXACTLY two lines:\nDecision: <Absolutely SAFE | Possibly SAFE | Possibly UNSAFE | Absolutely UNSAFE>\n\
Reason: <brief explanation referencing key behavior or pattern>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SafetyLabel {
    AbsolutelyUnsafe,
    PossiblyUnsafe,
    PossiblySafe,
    AbsolutelySafe,
}

impl SafetyLabel {
    pub const ALL: [SafetyLabel; 4] = [
        SafetyLabel::AbsolutelySafe,
        SafetyLabel::PossiblySafe,
        SafetyLabel::PossiblyUnsafe,
        SafetyLabel::AbsolutelyUnsafe,
    ];

    /// The exact spelling used in the output contract.
    pub fn as_str(self) -> &'static str {
        match self {
            SafetyLabel::AbsolutelySafe => "Absolutely SAFE",
            SafetyLabel::PossiblySafe => "Possibly SAFE",
            SafetyLabel::PossiblyUnsafe => "Possibly UNSAFE",
            SafetyLabel::AbsolutelyUnsafe => "Absolutely UNSAFE",
        }
    }

    pub fn binary(self) -> Binary {
        if self == SafetyLabel::AbsolutelySafe {
            Binary::Safe
        } else {
            Binary::Unsafe
        }
    }
}

impl fmt::Display for SafetyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SafetyLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SafetyLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown label {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Binary {
    Safe,
    Unsafe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierVerdict {
    pub conv_id: String,
    pub label: Option<SafetyLabel>,
    pub reason: String,
    pub binary: Option<Binary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Substitutes the conversation into the template. With `few_shot`, the
/// exemplar block is placed right before the classification instruction.
pub fn build_prompt(template: &str, conversation: &str, few_shot: Option<&str>) -> Result<String> {
    if conversation.trim().is_empty() {
        return Err(Error::input("empty conversation"));
    }
    if !template.contains(PLACEHOLDER) {
        return Err(Error::Config(format!("prompt template lacks {PLACEHOLDER}")));
    }
    let mut t = template.to_string();
    if let Some(block) = few_shot {
        let at = t
            .find(CLASSIFY_ANCHOR)
            .ok_or_else(|| Error::Config(format!("prompt template lacks {CLASSIFY_ANCHOR:?}")))?;
        let mut block = block.trim_end().to_string();
        block.push_str("\n\n");
        t.insert_str(at, &block);
    }
    Ok(t.trim_end().replacen(PLACEHOLDER, conversation, 1))
}

/// Parses the two-line `Decision:` / `Reason:` contract.
pub fn parse_decision(output: &str) -> Result<(SafetyLabel, String)> {
    let lines: Vec<&str> = output.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let [d, r] = lines.as_slice() else {
        return Err(Error::Parse(format!("expected two lines, got {}", lines.len())));
    };
    let label = d
        .strip_prefix("Decision:")
        .ok_or_else(|| Error::Parse("first line must start with `Decision:`".into()))?
        .trim()
        .parse()?;
    let reason = r
        .strip_prefix("Reason:")
        .ok_or_else(|| Error::Parse("second line must start with `Reason:`".into()))?
        .trim()
        .to_string();
    Ok((label, reason))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Chat-completion endpoint.
    pub url: String,
    pub model: String,
    pub few_shot: bool,
    pub concurrency: usize,
    pub timeout_secs: u64,
    /// Optional template override; the bundled template when empty.
    pub prompt_path: Option<String>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            url: "http://127.0.0.1:8089/v1/chat/completions".into(),
            model: "gpt-oss-120b".into(),
            few_shot: true,
            concurrency: 4,
            timeout_secs: 120,
            prompt_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: &str) -> Self {
        ChatMessage {
            role: role.into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatChoice {
    pub message: ChatMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
}

impl ChatResponse {
    pub fn single(content: impl Into<String>) -> Self {
        ChatResponse {
            choices: vec![ChatChoice {
                message: ChatMessage {
                    role: "assistant".into(),
                    content: content.into(),
                },
            }],
        }
    }
}

pub struct LlmClient {
    http: reqwest::Client,
    cfg: LlmConfig,
    template: String,
}

impl LlmClient {
    pub fn new(cfg: LlmConfig, template: String) -> Result<Self> {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(LlmClient { http, cfg, template })
    }

    async fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        let req = ChatRequest {
            model: self.cfg.model.clone(),
            messages: messages.to_vec(),
            temperature: 0.0,
        };
        let resp = self
            .http
            .post(&self.cfg.url)
            .json(&req)
            .send()
            .await
            .map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Error::Transport(format!("{} returned {status}", self.cfg.url)));
        }
        let body: ChatResponse = resp.json().await.map_err(|e| Error::Transport(e.to_string()))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::Transport("response has no choices".into()))
    }

    /// Classifies one rendered conversation. Format failures after one retry
    /// come back as a verdict carrying `error`; transport failures are `Err`.
    pub async fn classify(&self, conv_id: &str, conversation: &str) -> Result<ClassifierVerdict> {
        let few = self.cfg.few_shot.then_some(FEW_SHOT_BLOCK);
        let prompt = build_prompt(&self.template, conversation, few)?;
        let mut messages = vec![ChatMessage::new("user", &prompt)];
        let first = self.complete(&messages).await?;
        let parsed = match parse_decision(&first) {
            Ok(p) => Ok(p),
            Err(e) => {
                debug!(conv_id, error = %e, "malformed classifier output, retrying");
                messages.push(ChatMessage::new("assistant", &first));
                messages.push(ChatMessage::new("user", RETRY_INSTRUCTION));
                let second = self.complete(&messages).await?;
                parse_decision(&second)
            }
        };
        Ok(match parsed {
            Ok((label, reason)) => ClassifierVerdict {
                conv_id: conv_id.to_string(),
                label: Some(label),
                reason,
                binary: Some(label.binary()),
                error: None,
            },
            Err(e) => {
                warn!(conv_id, error = %e, "classifier output unparseable after retry");
                ClassifierVerdict {
                    conv_id: conv_id.to_string(),
                    label: None,
                    reason: String::new(),
                    binary: None,
                    error: Some(e.to_string()),
                }
            }
        })
    }

    /// Classifies many conversations with bounded concurrency, keeping order.
    pub async fn classify_all(&self, convs: &[(String, String)]) -> Result<Vec<ClassifierVerdict>> {
        stream::iter(convs)
            .map(|(id, text)| self.classify(id, text))
            .buffered(self.cfg.concurrency.max(1))
            .collect::<Vec<_>>()
            .await
            .into_iter()
            .collect()
    }
}

/// Deterministic stand-in for a model: answers from keyword cues in the
/// conversation part of the prompt. A conversation containing
/// `<<malformed>>` gets prose instead of the contract.
pub fn stub_completion(request: &ChatRequest) -> String {
    let prompt = request
        .messages
        .iter()
        .find(|m| m.role == "user")
        .map(|m| m.content.as_str())
        .unwrap_or("");
    let conv = prompt
        .rfind("Conversation:\n")
        .map(|i| &prompt[i + "Conversation:\n".len()..])
        .unwrap_or(prompt)
        .to_lowercase();
    if conv.contains("<<malformed>>") {
        return "I think this conversation is probably fine overall.".into();
    }
    const CUES: &[(&str, &str, &str)] = &[
        ("snap", "Absolutely UNSAFE", "grooming, attempts to move to another platform"),
        ("discord", "Absolutely UNSAFE", "attempts to move to another platform"),
        ("how old", "Absolutely UNSAFE", "grooming, asking for age"),
        ("address", "Absolutely UNSAFE", "request for personal information such as address"),
        ("[phone_", "Absolutely UNSAFE", "request for personal information, phone number shared"),
        ("kill", "Absolutely UNSAFE", "explicit threats of violence"),
        ("loser", "Absolutely UNSAFE", "bullying by insulting someone"),
        ("stupid", "Absolutely UNSAFE", "bullying and harassment"),
        ("damn", "Absolutely UNSAFE", "mild profanity"),
        ("####", "Possibly UNSAFE", "masked content suggests profanity"),
        ("cute", "Possibly SAFE", "compliment without sexual intent"),
    ];
    for (cue, label, reason) in CUES {
        if conv.contains(cue) {
            return format!("Decision: {label}\nReason: {reason}");
        }
    }
    "Decision: Absolutely SAFE\nReason: normal game discussion".into()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl EvalCounts {
    /// Unsafe is the positive class.
    pub fn from_pairs(pairs: &[(Binary, Binary)]) -> Self {
        let mut c = EvalCounts::default();
        for &(pred, truth) in pairs {
            match (pred, truth) {
                (Binary::Unsafe, Binary::Unsafe) => c.tp += 1,
                (Binary::Unsafe, Binary::Safe) => c.fp += 1,
                (Binary::Safe, Binary::Safe) => c.tn += 1,
                (Binary::Safe, Binary::Unsafe) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub counts: EvalCounts,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when `tp + fp == 0`; precision is then reported as 0.
    pub precision_undefined: bool,
}

pub fn metrics(c: EvalCounts) -> Result<Metrics> {
    if c.total() == 0 {
        return Err(Error::input("no verdicts to score"));
    }
    let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Metrics {
        counts: c,
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        f1,
        precision_undefined: c.tp + c.fp == 0,
    })
}

/// `(predicted, truth)` pairs to metrics.
pub fn score(pairs: &[(Binary, Binary)]) -> Result<Metrics> {
    metrics(EvalCounts::from_pairs(pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn template_is_faithful() {
        assert!(PROMPT_TEMPLATE.starts_with("Role: You are a content safety classifier"));
        assert_eq!(PROMPT_TEMPLATE.matches(PLACEHOLDER).count(), 1);
        assert!(PROMPT_TEMPLATE.contains("Decision: <Absolutely SAFE | Possibly SAFE | Possibly UNSAFE | Absolutely UNSAFE>"));
    }

    #[test]
    fn zero_shot_prompt_ends_with_conversation() {
        let p = build_prompt(PROMPT_TEMPLATE, "user_00001: hi", None).unwrap();
        assert!(p.ends_with("Conversation:\nuser_00001: hi"));
        assert!(!p.contains("Examples:"));
    }

    #[test]
    fn few_shot_block_precedes_instruction() {
        let p = build_prompt(PROMPT_TEMPLATE, "user_00001: hi", Some(FEW_SHOT_BLOCK)).unwrap();
        let ex = p.find("Examples:").unwrap();
        let now = p.find(CLASSIFY_ANCHOR).unwrap();
        let fmt = p.find("OUTPUT FORMAT (STRICT):").unwrap();
        assert!(fmt < ex && ex < now);
        let golden = format!(
            "{}{}\n\n{}",
            &PROMPT_TEMPLATE[..PROMPT_TEMPLATE.find(CLASSIFY_ANCHOR).unwrap()],
            FEW_SHOT_BLOCK.trim_end(),
            "Now classify this conversation:\n\nConversation:\nuser_00001: hi"
        );
        assert_eq!(p, golden);
    }

    #[test]
    fn empty_conversation_rejected() {
        assert!(matches!(build_prompt(PROMPT_TEMPLATE, "  \n", None), Err(Error::Input(_))));
    }

    #[test]
    fn decision_parsing() {
        let (l, r) = parse_decision("Decision: Absolutely SAFE\nReason: game talk").unwrap();
        assert_eq!((l, l.binary(), r.as_str()), (SafetyLabel::AbsolutelySafe, Binary::Safe, "game talk"));
        let (l, _) = parse_decision("Decision: Possibly SAFE\nReason: vague").unwrap();
        assert_eq!(l.binary(), Binary::Unsafe);
        assert!(parse_decision("this looks fine").is_err());
        assert!(parse_decision("Decision: absolutely safe\nReason: x").is_err());
        assert!(parse_decision("Decision: Absolutely SAFE\nReason: x\nextra").is_err());
    }

    #[test]
    fn binary_mapping() {
        for l in SafetyLabel::ALL {
            assert_eq!(l.binary() == Binary::Safe, l == SafetyLabel::AbsolutelySafe);
        }
    }

    #[test]
    fn metrics_examples() {
        let m = metrics(EvalCounts { tp: 3193, fp: 6807, tn: 0, fn_: 1277 }).unwrap();
        assert!((m.precision - 0.3193).abs() < 1e-9);
        assert!((m.recall - 0.7143).abs() < 5e-5);
        assert!((m.f1 - 0.4413).abs() < 2e-4);
        let m = score(&[(Binary::Unsafe, Binary::Unsafe), (Binary::Safe, Binary::Safe)]).unwrap();
        assert_eq!((m.accuracy, m.f1), (1.0, 1.0));
        let m = score(&[(Binary::Safe, Binary::Unsafe)]).unwrap();
        assert_eq!(m.recall, 0.0);
        assert!(m.precision_undefined);
        assert!(score(&[]).is_err());
    }

    #[test]
    fn stub_is_deterministic() {
        let req = |c: &str| ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage::new("user", &build_prompt(PROMPT_TEMPLATE, c, Some(FEW_SHOT_BLOCK)).unwrap())],
            temperature: 0.0,
        };
        // exemplar text must not leak into the decision
        assert_eq!(stub_completion(&req("a: hi")), "Decision: Absolutely SAFE\nReason: normal game discussion");
        assert!(stub_completion(&req("a: add me on discord")).starts_with("Decision: Absolutely UNSAFE"));
        assert!(parse_decision(&stub_completion(&req("a: <<malformed>>"))).is_err());
    }

    fn arb_binary() -> impl Strategy<Value = Binary> {
        prop_oneof![Just(Binary::Safe), Just(Binary::Unsafe)]
    }

    proptest! {
        #[test]
        fn metrics_match_confusion_oracle(pairs in prop::collection::vec((arb_binary(), arb_binary()), 1..1000)) {
            let m = score(&pairs).unwrap();
            let n = pairs.len() as f64;
            let count = |p: Binary, t: Binary| pairs.iter().filter(|x| **x == (p, t)).count() as f64;
            let (tp, fp, tn, fn_) = (
                count(Binary::Unsafe, Binary::Unsafe),
                count(Binary::Unsafe, Binary::Safe),
                count(Binary::Safe, Binary::Safe),
                count(Binary::Safe, Binary::Unsafe),
            );
            prop_assert!((m.accuracy - (tp + tn) / n).abs() < 1e-12);
            if tp + fp > 0.0 { prop_assert!((m.precision - tp / (tp + fp)).abs() < 1e-12); }
            if tp + fn_ > 0.0 { prop_assert!((m.recall - tp / (tp + fn_)).abs() < 1e-12); }
            if tp > 0.0 { prop_assert!((m.f1 - 2.0 * tp / (2.0 * tp + fp + fn_)).abs() < 1e-12); }
        }
    }
}
