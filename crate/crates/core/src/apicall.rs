//! The `ApiCall(method=..., parameters={...})` surface form.
//!
//! [`parse_apicall`] is a hand-written recursive-descent parser. Model outputs are
//! irregular, so it accepts a fixed tolerance matrix and reports everything else as
//! [`ParseOutcome::Malformed`]:
//!
//! | feature            | accepted                                                       |
//! |--------------------|----------------------------------------------------------------|
//! | keyword            | `apicall` in any casing, not preceded by a word character      |
//! | method             | `method=` then a quoted or bare name                           |
//! | parameter list     | `parameters=` (or `parameters:`), may be omitted when empty    |
//! | braces             | `{`/`}` optional and independent, so a lone `}` is tolerated   |
//! | pair separator     | `name: value` or `name=value`                                  |
//! | quotes             | `'..'`, `".."`, `` `..` `` and the TeX-style `` `..' ``      |
//! | escapes            | backslash escapes the next character inside quotes             |
//! | bare tokens        | names end at `:`/`=`; values end at `,`, `}` or `)`; trimmed  |
//! | surrounding prose  | ignored, as long as exactly one call is present                |

use std::fmt;

use serde::{Deserialize, Serialize};

/// Case-fold and trim, used wherever names are compared.
pub fn normalize_name(name: &str) -> String {
    name.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ApiCallError {
    #[error("method name is empty")]
    EmptyMethod,
    #[error("parameter name at position {0} is empty")]
    EmptyParamName(usize),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
}

/// A method name plus ordered `(slot name, value)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawApiCall", into = "RawApiCall")]
pub struct ApiCall {
    method: String,
    params: Vec<(String, String)>,
}

impl ApiCall {
    pub fn new(
        method: impl Into<String>,
        params: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ApiCallError> {
        let method = method.into();
        if method.trim().is_empty() {
            return Err(ApiCallError::EmptyMethod);
        }
        let params: Vec<(String, String)> = params.into_iter().collect();
        let mut seen = std::collections::HashSet::new();
        for (i, (name, _)) in params.iter().enumerate() {
            let key = normalize_name(name);
            if key.is_empty() {
                return Err(ApiCallError::EmptyParamName(i));
            }
            if !seen.insert(key) {
                return Err(ApiCallError::DuplicateParam(name.clone()));
            }
        }
        Ok(ApiCall { method, params })
    }

    /// Convenience constructor for literals; panics on invalid input.
    pub fn from_pairs(method: &str, params: &[(&str, &str)]) -> Self {
        Self::new(
            method,
            params.iter().map(|(n, v)| (n.to_string(), v.to_string())),
        )
        .expect("valid ApiCall literal")
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn params(&self) -> &[(String, String)] {
        &self.params
    }

    /// Looks a parameter up by normalized name.
    pub fn param(&self, name: &str) -> Option<&str> {
        let key = normalize_name(name);
        self.params
            .iter()
            .find(|(n, _)| normalize_name(n) == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn into_parts(self) -> (String, Vec<(String, String)>) {
        (self.method, self.params)
    }
}

impl fmt::Display for ApiCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_apicall(self))
    }
}

#[derive(Serialize, Deserialize)]
struct RawParam {
    name: String,
    value: String,
}

#[derive(Serialize, Deserialize)]
struct RawApiCall {
    method: String,
    parameters: Vec<RawParam>,
}

impl TryFrom<RawApiCall> for ApiCall {
    type Error = ApiCallError;

    fn try_from(raw: RawApiCall) -> Result<Self, Self::Error> {
        ApiCall::new(
            raw.method,
            raw.parameters.into_iter().map(|p| (p.name, p.value)),
        )
    }
}

impl From<ApiCall> for RawApiCall {
    fn from(call: ApiCall) -> Self {
        RawApiCall {
            method: call.method,
            parameters: call
                .params
                .into_iter()
                .map(|(name, value)| RawParam { name, value })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ParseStatus {
    Parsed,
    NotAnApicall,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseOutcome {
    Parsed(ApiCall),
    NotAnApiCall,
    Malformed(String),
}

impl ParseOutcome {
    pub fn status(&self) -> ParseStatus {
        match self {
            ParseOutcome::Parsed(_) => ParseStatus::Parsed,
            ParseOutcome::NotAnApiCall => ParseStatus::NotAnApicall,
            ParseOutcome::Malformed(_) => ParseStatus::Malformed,
        }
    }

    pub fn call(&self) -> Option<&ApiCall> {
        match self {
            ParseOutcome::Parsed(call) => Some(call),
            _ => None,
        }
    }

    pub fn into_call(self) -> Option<ApiCall> {
        match self {
            ParseOutcome::Parsed(call) => Some(call),
            _ => None,
        }
    }

    pub fn diagnostic(&self) -> Option<&str> {
        match self {
            ParseOutcome::Malformed(msg) => Some(msg),
            _ => None,
        }
    }

    pub fn is_parsed(&self) -> bool {
        matches!(self, ParseOutcome::Parsed(_))
    }
}

/// Canonical form: `ApiCall(method='M', parameters={'n1': 'v1', ...})`.
pub fn serialize_apicall(call: &ApiCall) -> String {
    let mut out = String::from("ApiCall(method=");
    push_quoted(&mut out, &call.method);
    out.push_str(", parameters={");
    for (i, (name, value)) in call.params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        push_quoted(&mut out, name);
        out.push_str(": ");
        push_quoted(&mut out, value);
    }
    out.push_str("})");
    out
}

fn push_quoted(out: &mut String, text: &str) {
    out.push('\'');
    for c in text.chars() {
        if c == '\'' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('\'');
}

const KEYWORD: &str = "apicall";

/// Byte offsets of every `apicall` keyword that is followed by `(`.
fn keyword_sites(text: &str, from: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    let lower = text.as_bytes();
    let mut pos = from;
    std::iter::from_fn(move || {
        while pos + KEYWORD.len() <= lower.len() {
            let start = pos;
            pos += 1;
            if !lower[start..start + KEYWORD.len()].eq_ignore_ascii_case(KEYWORD.as_bytes()) {
                continue;
            }
            if start > 0 {
                let prev = lower[start - 1];
                if prev.is_ascii_alphanumeric() || prev == b'_' {
                    continue;
                }
            }
            let after = start + KEYWORD.len();
            let rest = &text[after..];
            let trimmed = rest.trim_start();
            if trimmed.starts_with('(') {
                let open = after + (rest.len() - trimmed.len());
                return Some((start, open + 1));
            }
        }
        None
    })
}

/// Parses a model output that may contain one API call.
pub fn parse_apicall(text: &str) -> ParseOutcome {
    let Some((_, body_start)) = keyword_sites(text, 0).next() else {
        return ParseOutcome::NotAnApiCall;
    };
    let mut parser = Parser {
        src: text,
        pos: body_start,
    };
    let call = match parser.call_body() {
        Ok(call) => call,
        Err(msg) => return ParseOutcome::Malformed(msg),
    };
    if let Some((at, _)) = keyword_sites(text, parser.pos).next() {
        return ParseOutcome::Malformed(format!(
            "more than one ApiCall in output (second at byte {at})"
        ));
    }
    ParseOutcome::Parsed(call)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

type PResult<T> = Result<T, String>;

#[derive(Clone, Copy)]
enum BareKind {
    Method,
    Name,
    Value,
}

impl BareKind {
    fn terminates(self, c: char) -> bool {
        match self {
            BareKind::Method => matches!(c, ',' | ')'),
            BareKind::Name => matches!(c, ':' | '=' | ',' | '{' | '}' | '(' | ')' | '\n'),
            BareKind::Value => matches!(c, ',' | '}' | ')'),
        }
    }

    fn label(self) -> &'static str {
        match self {
            BareKind::Method => "method name",
            BareKind::Name => "parameter name",
            BareKind::Value => "parameter value",
        }
    }
}

impl<'a> Parser<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_keyword(&mut self, word: &str) -> bool {
        let rest = self.rest().as_bytes();
        if rest.len() >= word.len() && rest[..word.len()].eq_ignore_ascii_case(word.as_bytes()) {
            self.pos += word.len();
            true
        } else {
            false
        }
    }

    fn error<T>(&self, what: &str) -> PResult<T> {
        let found = match self.peek() {
            Some(c) => format!("`{c}`"),
            None => "end of input".to_string(),
        };
        Err(format!("expected {what} at byte {}, found {found}", self.pos))
    }

    fn call_body(&mut self) -> PResult<ApiCall> {
        self.skip_ws();
        if !self.eat_keyword("method") {
            return self.error("`method`");
        }
        self.skip_ws();
        if !self.eat('=') {
            return self.error("`=` after `method`");
        }
        self.skip_ws();
        let method = self.atom(BareKind::Method)?;
        if method.trim().is_empty() {
            return Err("method name is empty".to_string());
        }
        self.skip_ws();

        let mut params = Vec::new();
        if self.eat(',') {
            self.skip_ws();
            if self.peek() != Some(')') {
                params = self.parameters()?;
            }
        }
        self.skip_ws();
        if !self.eat(')') {
            return self.error("`)` closing the ApiCall");
        }
        ApiCall::new(method, params).map_err(|e| e.to_string())
    }

    fn parameters(&mut self) -> PResult<Vec<(String, String)>> {
        if !self.eat_keyword("parameters") {
            return self.error("`parameters`");
        }
        self.skip_ws();
        if !(self.eat('=') || self.eat(':')) {
            return self.error("`=` after `parameters`");
        }
        self.skip_ws();
        self.eat('{');
        self.skip_ws();

        let mut params = Vec::new();
        if !matches!(self.peek(), Some('}') | Some(')')) {
            loop {
                params.push(self.pair()?);
                self.skip_ws();
                if !self.eat(',') {
                    break;
                }
                self.skip_ws();
            }
        }
        self.skip_ws();
        self.eat('}');
        Ok(params)
    }

    fn pair(&mut self) -> PResult<(String, String)> {
        let name = self.atom(BareKind::Name)?;
        if name.trim().is_empty() {
            return Err(format!("empty parameter name before byte {}", self.pos));
        }
        self.skip_ws();
        if !(self.eat(':') || self.eat('=')) {
            return self.error(&format!("`:` or `=` after parameter `{name}`"));
        }
        self.skip_ws();
        let value = self.atom(BareKind::Value)?;
        Ok((name, value))
    }

    fn atom(&mut self, kind: BareKind) -> PResult<String> {
        match self.peek() {
            Some(q @ ('\'' | '"' | '`')) => {
                self.bump();
                self.quoted(q)
            }
            _ => self.bare(kind),
        }
    }

    fn quoted(&mut self, open: char) -> PResult<String> {
        let start = self.pos;
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(format!("unterminated quote opened at byte {}", start - 1)),
                Some('\\') => match self.bump() {
                    Some(c) => out.push(c),
                    None => return Err("dangling backslash at end of input".to_string()),
                },
                Some(c) if c == open || (open == '`' && c == '\'') => return Ok(out),
                Some(c) => out.push(c),
            }
        }
    }

    fn bare(&mut self, kind: BareKind) -> PResult<String> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if kind.terminates(c) {
                break;
            }
            self.bump();
        }
        let token = self.src[start..self.pos].trim();
        if token.is_empty() {
            return self.error(kind.label());
        }
        Ok(token.to_string())
    }
}
