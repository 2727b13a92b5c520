//! Recursive-descent parser for KSL.
//!
//! Newlines terminate statements; inside parentheses, brackets and after a
//! binary operator or comma they are insignificant.

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use crate::span::{Diagnostic, Span};

/// Parse a whole KSL source file.
pub fn parse(source: &str) -> Result<Ast, Vec<Diagnostic>> {
    let tokens = tokenize(source).map_err(|d| vec![d])?;
    let mut p = Parser { tokens, pos: 0 };
    p.program().map_err(|d| vec![d])
}

/// Parse a single expression (used by tests and the host script layer).
pub fn parse_expr(source: &str) -> Result<Expr, Vec<Diagnostic>> {
    let tokens = tokenize(source).map_err(|d| vec![d])?;
    let mut p = Parser { tokens, pos: 0 };
    let e = p.expr().map_err(|d| vec![d])?;
    p.skip_separators();
    p.expect(&Tok::Eof).map_err(|d| vec![d])?;
    Ok(e)
}

type PResult<T> = Result<T, Diagnostic>;

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn error<T>(&self, what: &str) -> PResult<T> {
        Err(Diagnostic::new(
            self.span(),
            format!("syntax error: expected {what}, found {}", self.peek().describe()),
        ))
    }

    fn expect(&mut self, tok: &Tok) -> PResult<Token> {
        if self.peek() == tok {
            Ok(self.bump())
        } else {
            self.error(&tok.describe())
        }
    }

    fn ident(&mut self) -> PResult<(String, Span)> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                let span = self.bump().span;
                Ok((name, span))
            }
            _ => self.error("identifier"),
        }
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek(), Tok::Newline) {
            self.bump();
        }
    }

    fn skip_separators(&mut self) {
        while matches!(self.peek(), Tok::Newline | Tok::Semi) {
            self.bump();
        }
    }

    fn program(&mut self) -> PResult<Ast> {
        let mut items = Vec::new();
        loop {
            self.skip_separators();
            match self.peek() {
                Tok::Eof => break,
                Tok::Function => items.push(Item::Function(self.function()?)),
                Tok::Record | Tok::Mutable => items.push(Item::Record(self.record()?)),
                _ => items.push(Item::Stmt(self.stmt()?)),
            }
        }
        Ok(Ast { items })
    }

    fn function(&mut self) -> PResult<FunctionDef> {
        let span = self.expect(&Tok::Function)?.span;
        let name = match self.peek().clone() {
            Tok::Ident(n) => {
                self.bump();
                n
            }
            Tok::Op(op) if op != "&&" && op != "||" => {
                self.bump();
                op.to_string()
            }
            _ => return self.error("function name"),
        };
        self.expect(&Tok::LParen)?;
        let mut params = Vec::new();
        self.skip_newlines();
        if !self.eat(&Tok::RParen) {
            loop {
                self.skip_newlines();
                let (pname, pspan) = self.ident()?;
                let ty = if self.eat(&Tok::ColonColon) { Some(self.type_expr()?) } else { None };
                params.push(Param { name: pname, ty, span: pspan });
                self.skip_newlines();
                if self.eat(&Tok::Comma) {
                    continue;
                }
                self.expect(&Tok::RParen)?;
                break;
            }
        }
        let body = self.block(&[Tok::End])?;
        self.expect(&Tok::End)?;
        Ok(FunctionDef { name, params, body, span })
    }

    fn type_expr(&mut self) -> PResult<TypeExpr> {
        let (name, span) = self.ident()?;
        let mut args = Vec::new();
        if self.eat(&Tok::LBrace) {
            loop {
                args.push(self.type_expr()?);
                if self.eat(&Tok::Comma) {
                    continue;
                }
                self.expect(&Tok::RBrace)?;
                break;
            }
        }
        Ok(TypeExpr { name, args, span })
    }

    fn record(&mut self) -> PResult<RecordDef> {
        let span = self.span();
        let mutable = self.eat(&Tok::Mutable);
        self.expect(&Tok::Record)?;
        let (name, _) = self.ident()?;
        let mut fields = Vec::new();
        loop {
            self.skip_separators();
            if self.eat(&Tok::End) {
                break;
            }
            let (fname, fspan) = self.ident()?;
            let ty = if self.eat(&Tok::ColonColon) { Some(self.type_expr()?) } else { None };
            fields.push(FieldDef { name: fname, ty, span: fspan });
            if !matches!(self.peek(), Tok::Newline | Tok::Semi | Tok::End) {
                return self.error("newline, `;` or `end` after record field");
            }
        }
        Ok(RecordDef { name, fields, mutable, span })
    }

    /// Statements up to (not including) one of `terminators`.
    fn block(&mut self, terminators: &[Tok]) -> PResult<Vec<Stmt>> {
        let mut stmts = Vec::new();
        loop {
            self.skip_separators();
            if terminators.contains(self.peek()) {
                return Ok(stmts);
            }
            if matches!(self.peek(), Tok::Eof) {
                let names: Vec<String> = terminators.iter().map(|t| t.describe()).collect();
                return self.error(&names.join(" or "));
            }
            stmts.push(self.stmt()?);
        }
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let span = self.span();
        let kind = match self.peek() {
            Tok::Return => {
                self.bump();
                if matches!(
                    self.peek(),
                    Tok::Newline | Tok::Semi | Tok::End | Tok::Else | Tok::Elseif | Tok::Eof
                ) {
                    StmtKind::Return(None)
                } else {
                    StmtKind::Return(Some(self.expr()?))
                }
            }
            Tok::If => {
                self.bump();
                self.if_rest()?
            }
            Tok::While => {
                self.bump();
                let cond = self.expr()?;
                let body = self.block(&[Tok::End])?;
                self.expect(&Tok::End)?;
                StmtKind::While { cond, body }
            }
            Tok::For => {
                self.bump();
                let (var, _) = self.ident()?;
                self.expect(&Tok::Assign)?;
                let start = self.expr()?;
                self.expect(&Tok::Colon)?;
                let stop = self.expr()?;
                let body = self.block(&[Tok::End])?;
                self.expect(&Tok::End)?;
                StmtKind::For { var, start, stop, body }
            }
            Tok::Function | Tok::Record | Tok::Mutable => {
                return self.error("statement (definitions are only allowed at top level)")
            }
            _ => {
                let target = self.expr()?;
                if self.eat(&Tok::Assign) {
                    if !matches!(
                        target.kind,
                        ExprKind::Var(_) | ExprKind::Index { .. } | ExprKind::Field { .. }
                    ) {
                        return Err(Diagnostic::new(target.span, "invalid assignment target"));
                    }
                    self.skip_newlines();
                    let value = self.expr()?;
                    StmtKind::Assign { target, value }
                } else {
                    StmtKind::Expr(target)
                }
            }
        };
        if !matches!(
            self.peek(),
            Tok::Newline | Tok::Semi | Tok::End | Tok::Else | Tok::Elseif | Tok::Eof
        ) {
            return self.error("end of statement");
        }
        Ok(Stmt { kind, span })
    }

    /// After `if` (or `elseif`): cond, then-block, optional else chain, `end`.
    fn if_rest(&mut self) -> PResult<StmtKind> {
        let cond = self.expr()?;
        let then_body = self.block(&[Tok::End, Tok::Else, Tok::Elseif])?;
        let else_body = match self.peek() {
            Tok::Else => {
                self.bump();
                let b = self.block(&[Tok::End])?;
                self.expect(&Tok::End)?;
                b
            }
            Tok::Elseif => {
                let span = self.bump().span;
                let nested = self.if_rest()?;
                vec![Stmt { kind: nested, span }]
            }
            _ => {
                self.expect(&Tok::End)?;
                Vec::new()
            }
        };
        Ok(StmtKind::If { cond, then_body, else_body })
    }

    pub(crate) fn expr(&mut self) -> PResult<Expr> {
        self.binary(0)
    }

    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op(s) => BinOp::from_symbol(s).expect("lexer only produces known operators"),
                _ => return Ok(lhs),
            };
            let prec = precedence(op);
            if prec < min_prec {
                return Ok(lhs);
            }
            let span = self.bump().span;
            self.skip_newlines();
            // `^` is right-associative, the rest left-associative.
            let rhs = if op == BinOp::Pow {
                let r = self.unary()?;
                self.pow_tail(r)?
            } else {
                self.binary(prec + 1)?
            };
            lhs = Expr {
                kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
    }

    /// Right-associative continuation of `a ^ b ^ c`.
    fn pow_tail(&mut self, base: Expr) -> PResult<Expr> {
        if let Tok::Op("^") = self.peek() {
            let span = self.bump().span;
            self.skip_newlines();
            let rhs = self.unary()?;
            let rhs = self.pow_tail(rhs)?;
            return Ok(Expr {
                kind: ExprKind::Binary(BinOp::Pow, Box::new(base), Box::new(rhs)),
                span,
            });
        }
        Ok(base)
    }

    fn unary(&mut self) -> PResult<Expr> {
        let span = self.span();
        match self.peek() {
            Tok::Op("-") => {
                self.bump();
                // `-x^2` parses as `-(x^2)`.
                let operand = self.unary()?;
                let operand = self.pow_tail(operand)?;
                Ok(Expr { kind: ExprKind::Unary(UnOp::Neg, Box::new(operand)), span })
            }
            Tok::Not => {
                self.bump();
                let operand = self.unary()?;
                Ok(Expr { kind: ExprKind::Unary(UnOp::Not, Box::new(operand)), span })
            }
            _ => self.postfix(),
        }
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.primary()?;
        loop {
            match self.peek() {
                Tok::LBracket => {
                    let span = self.bump().span;
                    self.skip_newlines();
                    let index = self.expr()?;
                    self.skip_newlines();
                    self.expect(&Tok::RBracket)?;
                    e = Expr { kind: ExprKind::Index { base: Box::new(e), index: Box::new(index) }, span };
                }
                Tok::Dot => {
                    let span = self.bump().span;
                    let (name, _) = self.ident()?;
                    e = Expr { kind: ExprKind::Field { base: Box::new(e), name }, span };
                }
                _ => return Ok(e),
            }
        }
    }

    fn primary(&mut self) -> PResult<Expr> {
        let span = self.span();
        let kind = match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                ExprKind::Int(v)
            }
            Tok::Int32(v) => {
                self.bump();
                ExprKind::Int32(v)
            }
            Tok::Float(v) => {
                self.bump();
                ExprKind::Float(v)
            }
            Tok::Float32(v) => {
                self.bump();
                ExprKind::Float32(v)
            }
            Tok::True => {
                self.bump();
                ExprKind::Bool(true)
            }
            Tok::False => {
                self.bump();
                ExprKind::Bool(false)
            }
            Tok::LParen => {
                self.bump();
                self.skip_newlines();
                let e = self.expr()?;
                self.skip_newlines();
                self.expect(&Tok::RParen)?;
                return Ok(e);
            }
            // An operator in argument position is a function value: `reduce(+, ...)`.
            Tok::Op(op) if matches!(self.peek_at(1), Tok::Comma | Tok::RParen) => {
                self.bump();
                ExprKind::OpRef(BinOp::from_symbol(op).expect("known operator"))
            }
            Tok::Ident(name) => {
                self.bump();
                if self.eat(&Tok::LParen) {
                    let args = self.call_args()?;
                    ExprKind::Call { callee: name, args }
                } else {
                    ExprKind::Var(name)
                }
            }
            _ => return self.error("expression"),
        };
        Ok(Expr { kind, span })
    }

    fn call_args(&mut self) -> PResult<Vec<Expr>> {
        let mut args = Vec::new();
        self.skip_newlines();
        if self.eat(&Tok::RParen) {
            return Ok(args);
        }
        loop {
            self.skip_newlines();
            args.push(self.expr()?);
            self.skip_newlines();
            if self.eat(&Tok::Comma) {
                continue;
            }
            self.expect(&Tok::RParen)?;
            return Ok(args);
        }
    }
}

fn precedence(op: BinOp) -> u8 {
    match op {
        BinOp::Or => 1,
        BinOp::And => 2,
        BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 3,
        BinOp::Add | BinOp::Sub => 4,
        BinOp::Mul | BinOp::Div | BinOp::Rem => 5,
        BinOp::Pow => 7,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::print::sexpr;

    #[test]
    fn one_line_function() {
        let ast = parse("function f(x) return 3*x^2 + 5*x + 2 end").unwrap();
        assert_eq!(ast.functions().count(), 1);
        let f = ast.functions().next().unwrap();
        assert_eq!(f.name, "f");
        assert_eq!(f.params.len(), 1);
    }

    #[test]
    fn empty_program() {
        let ast = parse("").unwrap();
        assert!(ast.items.is_empty());
    }

    #[test]
    fn unterminated_header_reports_end_of_input() {
        let err = parse("function f(x").unwrap_err();
        assert_eq!(err.len(), 1);
        assert!(err[0].message.contains("end of input"), "{}", err[0]);
        assert_eq!(err[0].span, Span::new(1, 13));
    }

    #[test]
    fn missing_end_is_an_error() {
        let err = parse("function f(x)\n  return x\n").unwrap_err();
        assert!(err[0].message.contains("`end`"), "{}", err[0]);
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse_expr("-x^2^3 + 2*y - 1").unwrap();
        assert_eq!(
            sexpr::expr(&e),
            "(- (+ (neg (^ x (^ 2 3))) (* 2 y)) 1)"
        );
        let e = parse_expr("a < b && c || !d").unwrap();
        assert_eq!(sexpr::expr(&e), "(|| (&& (< a b) c) (not d))");
    }

    #[test]
    fn postfix_chains() {
        let e = parse_expr("(blockIdx().x-1) * blockDim().x + threadIdx().x").unwrap();
        assert_eq!(
            sexpr::expr(&e),
            "(+ (* (- (. (call blockIdx) x) 1) (. (call blockDim) x)) (. (call threadIdx) x))"
        );
    }

    #[test]
    fn operator_methods_and_values() {
        let ast = parse("function +(a::Point, b::Point)\n return Point(a.x+b.x, a.y+b.y)\nend\ny = reduce(+, 0, x)").unwrap();
        assert_eq!(ast.functions().next().unwrap().name, "+");
        assert_eq!(ast.script().count(), 1);
    }

    #[test]
    fn elseif_chain_nests() {
        let ast = parse("if a\n x = 1\nelseif b\n x = 2\nelse\n x = 3\nend").unwrap();
        let s = ast.script().next().unwrap();
        match &s.kind {
            StmtKind::If { else_body, .. } => {
                assert!(matches!(else_body[0].kind, StmtKind::If { .. }))
            }
            _ => panic!(),
        }
    }

    #[test]
    fn records() {
        let ast = parse("record Point x; y end\nmutable record Acc\n  total::Float64\nend").unwrap();
        let recs: Vec<_> = ast.records().collect();
        assert_eq!(recs.len(), 2);
        assert!(!recs[0].mutable && recs[1].mutable);
        assert_eq!(recs[1].fields[0].ty.as_ref().unwrap().name, "Float64");
    }

    #[test]
    fn bare_return_before_end() {
        let ast = parse("function k() return end").unwrap();
        let f = ast.functions().next().unwrap();
        assert!(matches!(f.body[0].kind, StmtKind::Return(None)));
    }
}
