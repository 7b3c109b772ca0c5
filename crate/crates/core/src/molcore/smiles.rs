//! Reader for the restricted SMILES dialect:
//!
//! ```text
//! molecule := atom chain
//! chain    := (bond? atom | '(' chain ')')*
//! atom     := 'Cl' | 'Br' | 'C' | 'N' | 'O' | 'S' | 'P' | 'F' | 'I'
//! bond     := '=' | '#'
//! ```
//!
//! A missing bond symbol means a single bond. Ring closures are rejected.

use thiserror::Error;

use super::{Element, MolGraph};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty SMILES string")]
    Empty,
    #[error("unbalanced parenthesis at byte {0}")]
    UnbalancedParenthesis(usize),
    #[error("unknown element symbol at byte {0}")]
    UnknownElement(usize),
    #[error("bond symbol at byte {0} is not followed by an atom")]
    DanglingBond(usize),
    #[error("ring closure at byte {0} is not supported")]
    RingClosure(usize),
    #[error("branch opened at byte {0} before any atom")]
    BranchWithoutAtom(usize),
}

pub fn parse_smiles(text: &str) -> Result<MolGraph, ParseError> {
    if text.is_empty() {
        return Err(ParseError::Empty);
    }
    let bytes = text.as_bytes();
    let mut atoms: Vec<Element> = Vec::new();
    let mut bonds: Vec<(usize, usize, u8)> = Vec::new();
    // Atom that the next atom attaches to, plus the stack of branch points.
    let mut prev: Option<usize> = None;
    let mut branches: Vec<(Option<usize>, usize)> = Vec::new();
    // Pending bond order and where its symbol was.
    let mut pending: Option<(u8, usize)> = None;

    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b'(' => {
                if let Some((_, at)) = pending {
                    return Err(ParseError::DanglingBond(at));
                }
                if prev.is_none() {
                    return Err(ParseError::BranchWithoutAtom(i));
                }
                branches.push((prev, i));
                i += 1;
            }
            b')' => {
                if let Some((_, at)) = pending {
                    return Err(ParseError::DanglingBond(at));
                }
                let (saved, _) = branches.pop().ok_or(ParseError::UnbalancedParenthesis(i))?;
                prev = saved;
                i += 1;
            }
            b'=' | b'#' => {
                if let Some((_, at)) = pending {
                    return Err(ParseError::DanglingBond(at));
                }
                if prev.is_none() {
                    return Err(ParseError::DanglingBond(i));
                }
                pending = Some((if c == b'=' { 2 } else { 3 }, i));
                i += 1;
            }
            b'0'..=b'9' | b'%' => return Err(ParseError::RingClosure(i)),
            _ => {
                let (element, width) =
                    read_element(&bytes[i..]).ok_or(ParseError::UnknownElement(i))?;
                let idx = atoms.len();
                atoms.push(element);
                if let Some(p) = prev {
                    let order = pending.take().map_or(1, |(o, _)| o);
                    bonds.push((p, idx, order));
                }
                prev = Some(idx);
                i += width;
            }
        }
    }
    if let Some((_, at)) = pending {
        return Err(ParseError::DanglingBond(at));
    }
    if let Some(&(_, at)) = branches.last() {
        return Err(ParseError::UnbalancedParenthesis(at));
    }
    Ok(MolGraph::new(atoms, bonds).expect("parser emits a tree by construction"))
}

fn read_element(rest: &[u8]) -> Option<(Element, usize)> {
    match rest {
        [b'C', b'l', ..] => Some((Element::Cl, 2)),
        [b'B', b'r', ..] => Some((Element::Br, 2)),
        [b'C', ..] => Some((Element::C, 1)),
        [b'N', ..] => Some((Element::N, 1)),
        [b'O', ..] => Some((Element::O, 1)),
        [b'S', ..] => Some((Element::S, 1)),
        [b'P', ..] => Some((Element::P, 1)),
        [b'F', ..] => Some((Element::F, 1)),
        [b'I', ..] => Some((Element::I, 1)),
        _ => None,
    }
}
