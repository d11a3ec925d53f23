use super::tree::Tree;
use crate::error::{Error, Result};

#[derive(Debug, PartialEq)]
enum Tok<'a> {
    Open(usize),
    Close(usize),
    Atom(usize, &'a str),
}

fn tokenize(text: &str) -> Vec<Tok<'_>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                out.push(Tok::Open(i));
                i += 1;
            }
            b')' => {
                out.push(Tok::Close(i));
                i += 1;
            }
            b if b.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len()
                    && !bytes[i].is_ascii_whitespace()
                    && bytes[i] != b'('
                    && bytes[i] != b')'
                {
                    i += 1;
                }
                out.push(Tok::Atom(start, &text[start..i]));
            }
        }
    }
    out
}

/// Raw parse result before cleaning; `None` label for the PTB outer wrapper `( (S ...) )`.
enum Raw {
    Leaf(String, String),
    Node(Option<String>, Vec<Raw>),
}

struct Parser<'a> {
    toks: Vec<Tok<'a>>,
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn parse_node(&mut self) -> Result<Raw> {
        let open = match self.toks.get(self.pos) {
            Some(Tok::Open(o)) => *o,
            Some(Tok::Close(o)) | Some(Tok::Atom(o, _)) => {
                return Err(Error::Parse {
                    offset: *o,
                    message: "expected '('".into(),
                })
            }
            None => {
                return Err(Error::Parse {
                    offset: self.end,
                    message: "unexpected end of input, expected '('".into(),
                })
            }
        };
        self.pos += 1;
        let label = match self.toks.get(self.pos) {
            Some(Tok::Atom(_, a)) => {
                self.pos += 1;
                Some(a.to_string())
            }
            _ => None,
        };
        let mut children = Vec::new();
        let mut word = None;
        loop {
            match self.toks.get(self.pos) {
                Some(Tok::Close(_)) => {
                    self.pos += 1;
                    break;
                }
                Some(Tok::Open(_)) => {
                    if word.is_some() {
                        return Err(self.err_here("word and subtree mixed in one node"));
                    }
                    children.push(self.parse_node()?);
                }
                Some(Tok::Atom(o, a)) => {
                    if word.is_some() || !children.is_empty() {
                        return Err(Error::Parse {
                            offset: *o,
                            message: format!("unexpected token {:?}", a),
                        });
                    }
                    word = Some(a.to_string());
                    self.pos += 1;
                }
                None => {
                    return Err(Error::Parse {
                        offset: self.end,
                        message: format!("unbalanced brackets: '(' at byte {} is never closed", open),
                    })
                }
            }
        }
        match (label, word) {
            (Some(l), Some(w)) => Ok(Raw::Leaf(l, w)),
            (None, Some(w)) => Err(Error::Parse {
                offset: open,
                message: format!("leaf {:?} has no tag", w),
            }),
            (label, None) if !children.is_empty() => Ok(Raw::Node(label, children)),
            (_, None) => Err(Error::Parse {
                offset: open,
                message: "empty node".into(),
            }),
        }
    }

    fn err_here(&self, message: &str) -> Error {
        let offset = match self.toks.get(self.pos) {
            Some(Tok::Open(o)) | Some(Tok::Close(o)) | Some(Tok::Atom(o, _)) => *o,
            None => self.end,
        };
        Error::Parse {
            offset,
            message: message.into(),
        }
    }
}

/// Strips function tags and co-indices: `NP-SBJ-1` -> `NP`, `PP=2` -> `PP`.
/// Labels starting with '-' (e.g. `-NONE-`, `-LRB-`) are kept whole.
pub fn strip_function_tags(label: &str) -> &str {
    if label.starts_with('-') {
        return label;
    }
    match label.find(['-', '=']) {
        Some(i) if i > 0 => &label[..i],
        _ => label,
    }
}

fn clean(raw: Raw) -> Option<Tree> {
    match raw {
        Raw::Leaf(tag, word) => {
            if tag == "-NONE-" {
                None
            } else {
                Some(Tree::Leaf { tag, word })
            }
        }
        Raw::Node(label, children) => {
            let kids: Vec<Tree> = children.into_iter().filter_map(clean).collect();
            if kids.is_empty() {
                return None;
            }
            match label {
                // unlabeled outer wrapper around a single tree
                None if kids.len() == 1 => kids.into_iter().next(),
                None => Some(Tree::Node {
                    label: String::new(),
                    children: kids,
                }),
                Some(l) => Some(Tree::Node {
                    label: strip_function_tags(&l).to_string(),
                    children: kids,
                }),
            }
        }
    }
}

/// Reads every tree in bracketed notation. Empty elements (`-NONE-`) and
/// function tags are removed; nodes emptied by that removal disappear.
pub fn parse_bracketed(text: &str) -> Result<Vec<Tree>> {
    let mut p = Parser {
        toks: tokenize(text),
        pos: 0,
        end: text.len(),
    };
    let mut out = Vec::new();
    while p.pos < p.toks.len() {
        if let Tok::Close(o) = p.toks[p.pos] {
            return Err(Error::Parse {
                offset: o,
                message: "unbalanced brackets: unmatched ')'".into(),
            });
        }
        let raw = p.parse_node()?;
        if let Some(t) = clean(raw) {
            out.push(t);
        }
    }
    Ok(out)
}
