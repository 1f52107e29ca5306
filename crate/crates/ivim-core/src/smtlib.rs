//! Lexer, parser, and evaluator for the SMT-LIB subset the solver emits:
//! `set-logic`, `declare-const <symbol> Int`, `assert` over linear integer
//! terms (`+`, `*`, `-`, `<=`, `>=`, `=`), and `check-sat`.
//!
//! Used to validate exported scripts and to substitute assignments into
//! their assertions.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SmtError {
    #[error("lex error at byte {0}: unexpected character {1:?}")]
    Lex(usize, char),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),
    #[error("type error: {0}")]
    Type(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    LParen,
    RParen,
    Symbol(String),
    Numeral(i64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SExpr {
    Symbol(String),
    Numeral(i64),
    List(Vec<SExpr>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    SetLogic(String),
    DeclareConst(String),
    Assert(SExpr),
    CheckSat,
}

fn is_symbol_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || "~!@$%^&*_-+=<>.?/".contains(c)
}

fn lex(text: &str) -> Result<Vec<Token>, SmtError> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        match c {
            '(' => {
                tokens.push(Token::LParen);
                chars.next();
            }
            ')' => {
                tokens.push(Token::RParen);
                chars.next();
            }
            ';' => {
                while let Some(&(_, c)) = chars.peek() {
                    chars.next();
                    if c == '\n' {
                        break;
                    }
                }
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            c if c.is_ascii_digit() => {
                let mut value = String::new();
                while let Some(&(_, d)) = chars.peek() {
                    if d.is_ascii_digit() {
                        value.push(d);
                        chars.next();
                    } else {
                        break;
                    }
                }
                tokens.push(Token::Numeral(value.parse().map_err(|_| {
                    SmtError::Parse(format!("numeral out of range: {value}"))
                })?));
            }
            c if is_symbol_char(c) => {
                let mut sym = String::new();
                while let Some(&(_, s)) = chars.peek() {
                    if is_symbol_char(s) {
                        sym.push(s);
                        chars.next();
                    } else {
                        break;
                    }
                }
                tokens.push(Token::Symbol(sym));
            }
            other => return Err(SmtError::Lex(pos, other)),
        }
    }
    Ok(tokens)
}

fn parse_sexpr(tokens: &[Token], pos: &mut usize) -> Result<SExpr, SmtError> {
    match tokens.get(*pos) {
        Some(Token::LParen) => {
            *pos += 1;
            let mut items = Vec::new();
            loop {
                match tokens.get(*pos) {
                    Some(Token::RParen) => {
                        *pos += 1;
                        return Ok(SExpr::List(items));
                    }
                    Some(_) => items.push(parse_sexpr(tokens, pos)?),
                    None => return Err(SmtError::Parse("unbalanced parenthesis".into())),
                }
            }
        }
        Some(Token::RParen) => Err(SmtError::Parse("unexpected ')'".into())),
        Some(Token::Symbol(s)) => {
            *pos += 1;
            Ok(SExpr::Symbol(s.clone()))
        }
        Some(Token::Numeral(n)) => {
            *pos += 1;
            Ok(SExpr::Numeral(*n))
        }
        None => Err(SmtError::Parse("unexpected end of input".into())),
    }
}

/// Parses a full script into commands, enforcing the emitted subset's
/// structure (declarations before use is checked during evaluation).
pub fn parse_script(text: &str) -> Result<Vec<Command>, SmtError> {
    let tokens = lex(text)?;
    let mut pos = 0;
    let mut commands = Vec::new();
    while pos < tokens.len() {
        let expr = parse_sexpr(&tokens, &mut pos)?;
        let SExpr::List(items) = expr else {
            return Err(SmtError::Parse("top-level form must be a list".into()));
        };
        let Some(SExpr::Symbol(head)) = items.first() else {
            return Err(SmtError::Parse("command must start with a symbol".into()));
        };
        match head.as_str() {
            "set-logic" => match items.as_slice() {
                [_, SExpr::Symbol(logic)] => commands.push(Command::SetLogic(logic.clone())),
                _ => return Err(SmtError::Parse("malformed set-logic".into())),
            },
            "declare-const" => match items.as_slice() {
                [_, SExpr::Symbol(name), SExpr::Symbol(sort)] if sort == "Int" => {
                    commands.push(Command::DeclareConst(name.clone()))
                }
                _ => return Err(SmtError::Parse("malformed declare-const".into())),
            },
            "assert" => match items.as_slice() {
                [_, term] => commands.push(Command::Assert(term.clone())),
                _ => return Err(SmtError::Parse("malformed assert".into())),
            },
            "check-sat" => {
                if items.len() != 1 {
                    return Err(SmtError::Parse("malformed check-sat".into()));
                }
                commands.push(Command::CheckSat);
            }
            other => return Err(SmtError::Parse(format!("unsupported command {other:?}"))),
        }
    }
    Ok(commands)
}

/// Structural validity of a solver-emitted script: QF_LIA logic, every
/// asserted symbol declared, exactly one trailing check-sat.
pub fn validate_script(text: &str) -> Result<(), SmtError> {
    let commands = parse_script(text)?;
    let mut declared = BTreeMap::new();
    let mut saw_logic = false;
    let mut saw_check = false;
    for command in &commands {
        if saw_check {
            return Err(SmtError::Parse("command after check-sat".into()));
        }
        match command {
            Command::SetLogic(logic) => {
                if logic != "QF_LIA" {
                    return Err(SmtError::Parse(format!("unexpected logic {logic:?}")));
                }
                saw_logic = true;
            }
            Command::DeclareConst(name) => {
                declared.insert(name.clone(), 0i64);
            }
            Command::Assert(term) => {
                check_symbols(term, &declared)?;
            }
            Command::CheckSat => saw_check = true,
        }
    }
    if !saw_logic {
        return Err(SmtError::Parse("missing set-logic".into()));
    }
    if !saw_check {
        return Err(SmtError::Parse("missing check-sat".into()));
    }
    Ok(())
}

fn check_symbols(term: &SExpr, declared: &BTreeMap<String, i64>) -> Result<(), SmtError> {
    match term {
        SExpr::Numeral(_) => Ok(()),
        SExpr::Symbol(s) => {
            if declared.contains_key(s) {
                Ok(())
            } else {
                Err(SmtError::UnknownSymbol(s.clone()))
            }
        }
        SExpr::List(items) => {
            let Some(SExpr::Symbol(op)) = items.first() else {
                return Err(SmtError::Parse("application head must be a symbol".into()));
            };
            if !matches!(op.as_str(), "+" | "*" | "-" | "<=" | ">=" | "=") {
                return Err(SmtError::Parse(format!("unsupported operator {op:?}")));
            }
            for item in &items[1..] {
                check_symbols(item, declared)?;
            }
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Value {
    Int(i64),
    Bool(bool),
}

fn eval(term: &SExpr, env: &BTreeMap<String, i64>) -> Result<Value, SmtError> {
    match term {
        SExpr::Numeral(n) => Ok(Value::Int(*n)),
        SExpr::Symbol(s) => env
            .get(s)
            .map(|&v| Value::Int(v))
            .ok_or_else(|| SmtError::UnknownSymbol(s.clone())),
        SExpr::List(items) => {
            let Some(SExpr::Symbol(op)) = items.first() else {
                return Err(SmtError::Parse("application head must be a symbol".into()));
            };
            let args: Result<Vec<Value>, SmtError> =
                items[1..].iter().map(|t| eval(t, env)).collect();
            let args = args?;
            let ints = |args: &[Value]| -> Result<Vec<i64>, SmtError> {
                args.iter()
                    .map(|v| match v {
                        Value::Int(i) => Ok(*i),
                        Value::Bool(_) => Err(SmtError::Type(format!(
                            "operator {op} expects integer arguments"
                        ))),
                    })
                    .collect()
            };
            match op.as_str() {
                "+" => Ok(Value::Int(ints(&args)?.iter().sum())),
                "*" => Ok(Value::Int(ints(&args)?.iter().product())),
                "-" => {
                    let xs = ints(&args)?;
                    match xs.as_slice() {
                        [x] => Ok(Value::Int(-x)),
                        [first, rest @ ..] => {
                            Ok(Value::Int(rest.iter().fold(*first, |acc, x| acc - x)))
                        }
                        [] => Err(SmtError::Type("'-' needs at least one argument".into())),
                    }
                }
                "<=" => {
                    let xs = ints(&args)?;
                    Ok(Value::Bool(xs.windows(2).all(|w| w[0] <= w[1])))
                }
                ">=" => {
                    let xs = ints(&args)?;
                    Ok(Value::Bool(xs.windows(2).all(|w| w[0] >= w[1])))
                }
                "=" => {
                    let xs = ints(&args)?;
                    Ok(Value::Bool(xs.windows(2).all(|w| w[0] == w[1])))
                }
                other => Err(SmtError::Parse(format!("unsupported operator {other:?}"))),
            }
        }
    }
}

/// Substitutes `env` into every assertion of the script and reports
/// whether all of them evaluate to true.
pub fn assertions_hold(text: &str, env: &BTreeMap<String, i64>) -> Result<bool, SmtError> {
    let commands = parse_script(text)?;
    for command in &commands {
        if let Command::Assert(term) = command {
            match eval(term, env)? {
                Value::Bool(true) => {}
                Value::Bool(false) => return Ok(false),
                Value::Int(_) => {
                    return Err(SmtError::Type("assertion is not boolean".into()));
                }
            }
        }
    }
    Ok(true)
}
