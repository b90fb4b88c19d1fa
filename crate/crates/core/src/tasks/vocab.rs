use crate::error::{invalid, Result};

/// Shared symbol table. Ids are dense from 0: digits first, then operators,
/// task markers and control tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Token {
    Digit(u8),
    Plus,
    Mod,
    Equals,
    Comma,
    AddTask,
    ModAddTask,
    SortTask,
    Bos,
    Eoa,
}

const NAMED: [(Token, &str); 9] = [
    (Token::Plus, "+"),
    (Token::Mod, "<mod>"),
    (Token::Equals, "="),
    (Token::Comma, ","),
    (Token::AddTask, "<add>"),
    (Token::ModAddTask, "<modadd>"),
    (Token::SortTask, "<sort>"),
    (Token::Bos, "<bos>"),
    (Token::Eoa, "<eoa>"),
];

impl Token {
    pub fn id(self) -> usize {
        match self {
            Token::Digit(d) => {
                debug_assert!(d < 10);
                usize::from(d)
            }
            other => 10 + NAMED.iter().position(|(t, _)| *t == other).expect("named token"),
        }
    }

    pub fn from_id(id: usize) -> Option<Token> {
        match id {
            0..=9 => Some(Token::Digit(id as u8)),
            _ => NAMED.get(id - 10).map(|(t, _)| *t),
        }
    }

    pub fn symbol(self) -> String {
        match self {
            Token::Digit(d) => d.to_string(),
            other => NAMED.iter().find(|(t, _)| *t == other).expect("named").1.to_string(),
        }
    }
}

pub struct Vocab;

impl Vocab {
    pub const SIZE: usize = 10 + NAMED.len();

    /// Decimal digits of `n` as token ids.
    pub fn number(n: u64) -> Vec<usize> {
        n.to_string().bytes().map(|b| usize::from(b - b'0')).collect()
    }

    /// Tokens that may appear in a gold answer.
    pub fn is_answer_token(id: usize) -> bool {
        id < 10 || id == Token::Comma.id()
    }

    pub fn render(ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| Token::from_id(i).map_or_else(|| format!("<?{i}>"), Token::symbol))
            .collect()
    }

    /// Inverse of [`Vocab::render`] for well-formed strings.
    pub fn encode(s: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        let mut rest = s;
        'outer: while !rest.is_empty() {
            let c = rest.as_bytes()[0];
            if c.is_ascii_digit() {
                out.push(usize::from(c - b'0'));
                rest = &rest[1..];
                continue;
            }
            for (t, sym) in NAMED {
                if let Some(r) = rest.strip_prefix(sym) {
                    out.push(t.id());
                    rest = r;
                    continue 'outer;
                }
            }
            return Err(invalid(format!("cannot tokenize '{rest}'")));
        }
        Ok(out)
    }
}
