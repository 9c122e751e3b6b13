//! Text serializations of trees: S-expressions (with a parser) and DOT.
//!
//! Every node is written as `(left word right)` with absent children
//! omitted, so a single word is `(word)`. Parentheses and backslashes inside
//! tokens are escaped with a backslash.

use std::fmt::Write;

use thiserror::Error;

use crate::tree::TreeNode;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error("tree refers to word {index} but the sentence has {len} words")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("malformed s-expression at byte {position}: {message}")]
    Syntax { position: usize, message: &'static str },
}

fn escape(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    for ch in token.chars() {
        if matches!(ch, '(' | ')' | '\\') {
            out.push('\\');
        }
        out.push(ch);
    }
    out
}

pub fn to_sexpr<S: AsRef<str>>(tree: &TreeNode, tokens: &[S]) -> Result<String, RenderError> {
    let mut out = String::new();
    write_node(tree, tokens, &mut out)?;
    Ok(out)
}

fn write_node<S: AsRef<str>>(node: &TreeNode, tokens: &[S], out: &mut String) -> Result<(), RenderError> {
    let word = tokens.get(node.index).ok_or(RenderError::IndexOutOfRange {
        index: node.index,
        len: tokens.len(),
    })?;
    out.push('(');
    if let Some(l) = &node.left {
        write_node(l, tokens, out)?;
        out.push(' ');
    }
    out.push_str(&escape(word.as_ref()));
    if let Some(r) = &node.right {
        out.push(' ');
        write_node(r, tokens, out)?;
    }
    out.push(')');
    Ok(())
}

struct Parser<'a> {
    chars: Vec<(usize, char)>,
    pos: usize,
    text: &'a str,
    words: Vec<String>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|&(_, c)| c)
    }

    fn offset(&self) -> usize {
        self.chars.get(self.pos).map_or(self.text.len(), |&(i, _)| i)
    }

    fn err(&self, message: &'static str) -> RenderError {
        RenderError::Syntax {
            position: self.offset(),
            message,
        }
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, c: char, message: &'static str) -> Result<(), RenderError> {
        self.skip_ws();
        if self.peek() != Some(c) {
            return Err(self.err(message));
        }
        self.pos += 1;
        Ok(())
    }

    fn word(&mut self) -> Result<String, RenderError> {
        self.skip_ws();
        let mut w = String::new();
        while let Some(c) = self.peek() {
            match c {
                '\\' => {
                    self.pos += 1;
                    w.push(self.peek().ok_or_else(|| self.err("dangling escape"))?);
                    self.pos += 1;
                }
                '(' | ')' => break,
                c if c.is_whitespace() => break,
                c => {
                    w.push(c);
                    self.pos += 1;
                }
            }
        }
        if w.is_empty() {
            return Err(self.err("expected a word"));
        }
        Ok(w)
    }

    fn node(&mut self) -> Result<TreeNode, RenderError> {
        self.expect('(', "expected '('")?;
        self.skip_ws();
        let left = if self.peek() == Some('(') { Some(self.node()?) } else { None };
        let word = self.word()?;
        let index = self.words.len();
        self.words.push(word);
        self.skip_ws();
        let right = if self.peek() == Some('(') { Some(self.node()?) } else { None };
        self.expect(')', "expected ')'")?;
        Ok(TreeNode::with_children(index, left, right))
    }
}

/// Parses an S-expression back into a tree and its in-order words.
pub fn parse_sexpr(text: &str) -> Result<(TreeNode, Vec<String>), RenderError> {
    let mut p = Parser {
        chars: text.char_indices().collect(),
        pos: 0,
        text,
        words: Vec::new(),
    };
    let root = p.node()?;
    p.skip_ws();
    if p.peek().is_some() {
        return Err(p.err("trailing input"));
    }
    Ok((root, p.words))
}

fn dot_label(token: &str) -> String {
    token.replace('\\', "\\\\").replace('"', "\\\"")
}

/// DOT digraph with one node per word and edges labelled `L` or `R`.
pub fn to_dot<S: AsRef<str>>(tree: &TreeNode, tokens: &[S]) -> Result<String, RenderError> {
    let mut nodes = String::new();
    let mut edges = String::new();
    for (node, _) in tree.spans() {
        let word = tokens.get(node.index).ok_or(RenderError::IndexOutOfRange {
            index: node.index,
            len: tokens.len(),
        })?;
        writeln!(nodes, "  n{} [label=\"{}\"];", node.index, dot_label(word.as_ref())).unwrap();
        for (child, side) in [(&node.left, "L"), (&node.right, "R")] {
            if let Some(c) = child {
                writeln!(edges, "  n{} -> n{} [label=\"{side}\"];", node.index, c.index).unwrap();
            }
        }
    }
    Ok(format!("digraph tree {{\n{nodes}{edges}}}\n"))
}
