//! ViT layer naming convention and name matching.
//!
//! Conventional names are `embed`, `final_norm` and
//! `block{i}.{ln1,attn.qkv,attn.proj,ln2,mlp.fc1,mlp.fc2}`.

pub const BLOCK_SUFFIXES: [&str; 6] = ["ln1", "attn.qkv", "attn.proj", "ln2", "mlp.fc1", "mlp.fc2"];

/// Splits `block{i}.{rest}` into `(i, rest)`.
pub fn parse_block(name: &str) -> Option<(usize, &str)> {
    let tail = name.strip_prefix("block")?;
    let dot = tail.find('.')?;
    let (digits, rest) = (&tail[..dot], &tail[dot + 1..]);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || rest.is_empty() {
        return None;
    }
    Some((digits.parse().ok()?, rest))
}

pub fn is_conventional(name: &str) -> bool {
    name == "embed"
        || name == "final_norm"
        || parse_block(name).is_some_and(|(_, rest)| BLOCK_SUFFIXES.contains(&rest))
}

/// Layer-type family of a layer or parameter-group name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerType {
    Attn,
    Ln,
    Fc,
}

impl LayerType {
    pub const ALL: [LayerType; 3] = [LayerType::Attn, LayerType::Ln, LayerType::Fc];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerType::Attn => "attn",
            LayerType::Ln => "ln",
            LayerType::Fc => "fc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    /// `attn` covers `block*.attn.*`, `ln` covers `block*.ln*` and `fc`
    /// covers `block*.mlp.*`. A bare type name maps to itself.
    pub fn of(name: &str) -> Option<Self> {
        if let Some(t) = Self::parse(name) {
            return Some(t);
        }
        let (_, rest) = parse_block(name)?;
        if rest.starts_with("attn.") {
            Some(LayerType::Attn)
        } else if rest.starts_with("ln") {
            Some(LayerType::Ln)
        } else if rest.starts_with("mlp.") {
            Some(LayerType::Fc)
        } else {
            None
        }
    }
}

/// Name selector: a glob when the pattern contains `*` or `?`, otherwise a
/// substring match. An empty pattern matches everything.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamePattern(String);

impl NamePattern {
    pub fn new(pattern: impl Into<String>) -> Self {
        NamePattern(pattern.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn matches(&self, name: &str) -> bool {
        if self.0.contains(['*', '?']) {
            glob_match(self.0.as_bytes(), name.as_bytes())
        } else {
            name.contains(&self.0)
        }
    }
}

fn glob_match(pat: &[u8], s: &[u8]) -> bool {
    let (mut p, mut i) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while i < s.len() {
        if p < pat.len() && (pat[p] == b'?' || pat[p] == s[i]) {
            p += 1;
            i += 1;
        } else if p < pat.len() && pat[p] == b'*' {
            star = Some((p, i));
            p += 1;
        } else if let Some((sp, si)) = star {
            p = sp + 1;
            i = si + 1;
            star = Some((sp, si + 1));
        } else {
            return false;
        }
    }
    pat[p..].iter().all(|&c| c == b'*')
}
