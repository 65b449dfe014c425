//! A small pickle reader covering what numpy arrays, scipy CSR matrices and
//! `defaultdict(list)` graphs need (protocols 0-5 binary opcodes; no text
//! protocol). Objects are never instantiated: callables and their arguments
//! are kept as data and interpreted by the caller.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

#[derive(Debug, Clone)]
pub(crate) enum Value {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Bytes(Vec<u8>),
    Tuple(Vec<Value>),
    List(Rc<RefCell<Vec<Value>>>),
    Dict(Rc<RefCell<Vec<(Value, Value)>>>),
    Global(String, String),
    Object(Rc<RefCell<Object>>),
}

#[derive(Debug, Clone)]
pub(crate) struct Object {
    pub callable: Value,
    pub args: Vec<Value>,
    pub state: Option<Value>,
    pub items: Vec<(Value, Value)>,
}

impl Value {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            Value::Bool(b) => Some(*b as i64),
            _ => None,
        }
    }

    /// Text of a `str`/`bytes` value (Python 2 strings arrive as bytes).
    pub fn as_text(&self) -> Option<String> {
        match self {
            Value::Str(s) => Some(s.clone()),
            Value::Bytes(b) => Some(b.iter().map(|&c| c as char).collect()),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<Vec<u8>> {
        match self {
            Value::Bytes(b) => Some(b.clone()),
            // Python 3 decodes Python 2 strings as latin-1
            Value::Str(s) => s.chars().map(|c| u8::try_from(c as u32).ok()).collect(),
            _ => None,
        }
    }

    pub fn items(&self) -> Option<Vec<Value>> {
        match self {
            Value::Tuple(v) => Some(v.clone()),
            Value::List(v) => Some(v.borrow().clone()),
            _ => None,
        }
    }

    pub fn dict_entries(&self) -> Option<Vec<(Value, Value)>> {
        match self {
            Value::Dict(d) => Some(d.borrow().clone()),
            Value::Object(o) => {
                let o = o.borrow();
                if o.items.is_empty() {
                    o.state.as_ref().and_then(Value::dict_entries)
                } else {
                    Some(o.items.clone())
                }
            }
            _ => None,
        }
    }

    pub fn dict_get(&self, key: &str) -> Option<Value> {
        self.dict_entries()?
            .into_iter()
            .find(|(k, _)| k.as_text().as_deref() == Some(key))
            .map(|(_, v)| v)
    }

    /// `(module, name)` of the class or function that built this object.
    pub fn class_name(&self) -> Option<(String, String)> {
        let Value::Object(o) = self else { return None };
        let o = o.borrow();
        match &o.callable {
            Value::Global(m, n) if n == "_reconstructor" || n == "__newobj__" => match o.args.first() {
                Some(Value::Global(m, n)) => Some((m.clone(), n.clone())),
                _ => None,
            },
            Value::Global(m, n) => Some((m.clone(), n.clone())),
            _ => None,
        }
    }
}

pub(crate) fn parse(data: &[u8]) -> Result<Value, String> {
    Machine {
        data,
        pos: 0,
        stack: Vec::new(),
        marks: Vec::new(),
        memo: HashMap::new(),
    }
    .run()
}

struct Machine<'a> {
    data: &'a [u8],
    pos: usize,
    stack: Vec<Value>,
    marks: Vec<usize>,
    memo: HashMap<usize, Value>,
}

impl<'a> Machine<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if self.pos + n > self.data.len() {
            return Err(format!("truncated pickle at byte {}", self.pos));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<usize, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize)
    }

    fn u32(&mut self) -> Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize)
    }

    fn line(&mut self) -> Result<String, String> {
        let start = self.pos;
        while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
            self.pos += 1;
        }
        if self.pos >= self.data.len() {
            return Err("unterminated text line in pickle".into());
        }
        let s = String::from_utf8_lossy(&self.data[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(s)
    }

    fn pop(&mut self) -> Result<Value, String> {
        self.stack.pop().ok_or_else(|| "pickle stack underflow".to_string())
    }

    fn top(&mut self) -> Result<&mut Value, String> {
        self.stack
            .last_mut()
            .ok_or_else(|| "pickle stack underflow".to_string())
    }

    fn pop_mark(&mut self) -> Result<Vec<Value>, String> {
        let m = self.marks.pop().ok_or("pickle mark stack underflow")?;
        if m > self.stack.len() {
            return Err("corrupt pickle mark".into());
        }
        Ok(self.stack.split_off(m))
    }

    fn utf8(&mut self, n: usize) -> Result<Value, String> {
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map(Value::Str).map_err(|e| e.to_string())
    }

    fn push_bytes(&mut self, n: usize) -> Result<(), String> {
        let b = self.take(n)?.to_vec();
        self.stack.push(Value::Bytes(b));
        Ok(())
    }

    fn memo_get(&self, i: usize) -> Result<Value, String> {
        self.memo
            .get(&i)
            .cloned()
            .ok_or_else(|| format!("missing memo entry {i}"))
    }

    fn memo_put(&mut self, i: usize) -> Result<(), String> {
        let v = self.stack.last().cloned().ok_or("memo put on empty stack")?;
        self.memo.insert(i, v);
        Ok(())
    }

    fn extend(target: &mut Value, items: Vec<Value>) -> Result<(), String> {
        match target {
            Value::List(l) => l.borrow_mut().extend(items),
            Value::Object(o) => {
                // list subclass: keep items as index-keyed pairs
                let mut o = o.borrow_mut();
                for v in items {
                    let k = Value::Int(o.items.len() as i64);
                    o.items.push((k, v));
                }
            }
            _ => return Err("APPEND on a non-list".into()),
        }
        Ok(())
    }

    fn set_items(target: &mut Value, kv: Vec<Value>) -> Result<(), String> {
        if !kv.len().is_multiple_of(2) {
            return Err("odd SETITEMS payload".into());
        }
        let mut it = kv.into_iter();
        let mut pairs = Vec::new();
        while let (Some(k), Some(v)) = (it.next(), it.next()) {
            pairs.push((k, v));
        }
        match target {
            Value::Dict(d) => d.borrow_mut().extend(pairs),
            Value::Object(o) => o.borrow_mut().items.extend(pairs),
            _ => return Err("SETITEM on a non-dict".into()),
        }
        Ok(())
    }

    fn reduce(callable: Value, args: Value) -> Result<Value, String> {
        let args = args.items().ok_or("REDUCE arguments are not a tuple")?;
        // Python 3 pickles bytes at protocol < 3 as _codecs.encode(str, "latin1")
        if let Value::Global(m, n) = &callable {
            if m == "_codecs" && n == "encode" {
                if let Some(b) = args.first().and_then(Value::as_bytes) {
                    return Ok(Value::Bytes(b));
                }
            }
            if (m == "__builtin__" || m == "builtins") && n == "bytearray" {
                if let Some(b) = args.first().and_then(Value::as_bytes) {
                    return Ok(Value::Bytes(b));
                }
            }
        }
        Ok(Value::Object(Rc::new(RefCell::new(Object {
            callable,
            args,
            state: None,
            items: Vec::new(),
        }))))
    }

    fn run(mut self) -> Result<Value, String> {
        loop {
            let op = self.u8()?;
            match op {
                0x80 => {
                    self.u8()?; // PROTO
                }
                0x95 => {
                    self.u64()?; // FRAME
                }
                b'.' => return self.pop(),
                b'(' => self.marks.push(self.stack.len()),
                b'N' => self.stack.push(Value::None),
                0x88 => self.stack.push(Value::Bool(true)),
                0x89 => self.stack.push(Value::Bool(false)),
                b'J' => {
                    let v = i32::from_le_bytes(self.take(4)?.try_into().unwrap());
                    self.stack.push(Value::Int(v as i64));
                }
                b'K' => {
                    let v = self.u8()?;
                    self.stack.push(Value::Int(v as i64));
                }
                b'M' => {
                    let v = self.u16()?;
                    self.stack.push(Value::Int(v as i64));
                }
                0x8a | 0x8b => {
                    let n = if op == 0x8a { self.u8()? as usize } else { self.u32()? };
                    let bytes = self.take(n)?;
                    if n > 8 {
                        return Err("LONG wider than 64 bits".into());
                    }
                    let mut buf = if bytes.last().is_some_and(|b| b & 0x80 != 0) {
                        [0xff; 8]
                    } else {
                        [0; 8]
                    };
                    buf[..n].copy_from_slice(bytes);
                    self.stack.push(Value::Int(i64::from_le_bytes(buf)));
                }
                b'I' => {
                    let l = self.line()?;
                    let v = match l.as_str() {
                        "00" => Value::Bool(false),
                        "01" => Value::Bool(true),
                        s => Value::Int(s.parse().map_err(|_| format!("bad INT {s:?}"))?),
                    };
                    self.stack.push(v);
                }
                b'L' => {
                    let l = self.line()?;
                    let v = l.trim_end_matches('L').parse().map_err(|_| format!("bad LONG {l:?}"))?;
                    self.stack.push(Value::Int(v));
                }
                b'G' => {
                    let v = f64::from_be_bytes(self.take(8)?.try_into().unwrap());
                    self.stack.push(Value::Float(v));
                }
                b'F' => {
                    let l = self.line()?;
                    let v = l.parse().map_err(|_| format!("bad FLOAT {l:?}"))?;
                    self.stack.push(Value::Float(v));
                }
                b'U' => {
                    let n = self.u8()? as usize;
                    self.push_bytes(n)?;
                }
                b'T' => {
                    let n = self.u32()?;
                    self.push_bytes(n)?;
                }
                b'C' => {
                    let n = self.u8()? as usize;
                    self.push_bytes(n)?;
                }
                b'B' => {
                    let n = self.u32()?;
                    self.push_bytes(n)?;
                }
                0x8e => {
                    let n = self.u64()?;
                    self.push_bytes(n)?;
                }
                0x96 => {
                    let n = self.u64()?;
                    self.push_bytes(n)?;
                }
                0x8c => {
                    let n = self.u8()? as usize;
                    let v = self.utf8(n)?;
                    self.stack.push(v);
                }
                b'X' => {
                    let n = self.u32()?;
                    let v = self.utf8(n)?;
                    self.stack.push(v);
                }
                0x8d => {
                    let n = self.u64()?;
                    let v = self.utf8(n)?;
                    self.stack.push(v);
                }
                b')' => self.stack.push(Value::Tuple(Vec::new())),
                0x85 => {
                    let a = self.pop()?;
                    self.stack.push(Value::Tuple(vec![a]));
                }
                0x86 => {
                    let b = self.pop()?;
                    let a = self.pop()?;
                    self.stack.push(Value::Tuple(vec![a, b]));
                }
                0x87 => {
                    let c = self.pop()?;
                    let b = self.pop()?;
                    let a = self.pop()?;
                    self.stack.push(Value::Tuple(vec![a, b, c]));
                }
                b't' => {
                    let items = self.pop_mark()?;
                    self.stack.push(Value::Tuple(items));
                }
                b']' => self.stack.push(Value::List(Rc::default())),
                b'l' => {
                    let items = self.pop_mark()?;
                    self.stack.push(Value::List(Rc::new(RefCell::new(items))));
                }
                b'}' => self.stack.push(Value::Dict(Rc::default())),
                b'd' => {
                    let items = self.pop_mark()?;
                    let mut d = Value::Dict(Rc::default());
                    Self::set_items(&mut d, items)?;
                    self.stack.push(d);
                }
                0x8f => self.stack.push(Value::List(Rc::default())), // EMPTY_SET
                0x90 => {
                    let items = self.pop_mark()?;
                    Self::extend(self.top()?, items)?; // ADDITEMS
                }
                0x91 => {
                    let items = self.pop_mark()?;
                    self.stack.push(Value::List(Rc::new(RefCell::new(items))));
                }
                b'a' => {
                    let v = self.pop()?;
                    Self::extend(self.top()?, vec![v])?;
                }
                b'e' => {
                    let items = self.pop_mark()?;
                    Self::extend(self.top()?, items)?;
                }
                b's' => {
                    let v = self.pop()?;
                    let k = self.pop()?;
                    Self::set_items(self.top()?, vec![k, v])?;
                }
                b'u' => {
                    let items = self.pop_mark()?;
                    Self::set_items(self.top()?, items)?;
                }
                b'p' => {
                    let i = self.line()?.parse().map_err(|_| "bad PUT index")?;
                    self.memo_put(i)?;
                }
                b'q' => {
                    let i = self.u8()? as usize;
                    self.memo_put(i)?;
                }
                b'r' => {
                    let i = self.u32()?;
                    self.memo_put(i)?;
                }
                0x94 => {
                    let i = self.memo.len();
                    self.memo_put(i)?;
                }
                b'g' => {
                    let i = self.line()?.parse().map_err(|_| "bad GET index")?;
                    let v = self.memo_get(i)?;
                    self.stack.push(v);
                }
                b'h' => {
                    let i = self.u8()? as usize;
                    let v = self.memo_get(i)?;
                    self.stack.push(v);
                }
                b'j' => {
                    let i = self.u32()?;
                    let v = self.memo_get(i)?;
                    self.stack.push(v);
                }
                b'c' => {
                    let module = self.line()?;
                    let name = self.line()?;
                    self.stack.push(Value::Global(module, name));
                }
                0x93 => {
                    let name = self.pop()?.as_text().ok_or("STACK_GLOBAL name is not a string")?;
                    let module = self.pop()?.as_text().ok_or("STACK_GLOBAL module is not a string")?;
                    self.stack.push(Value::Global(module, name));
                }
                b'R' => {
                    let args = self.pop()?;
                    let callable = self.pop()?;
                    let v = Self::reduce(callable, args)?;
                    self.stack.push(v);
                }
                0x81 => {
                    let args = self.pop()?;
                    let cls = self.pop()?;
                    let mut all = vec![cls];
                    all.extend(args.items().ok_or("NEWOBJ arguments are not a tuple")?);
                    let v = Self::reduce(Value::Global("copyreg".into(), "__newobj__".into()), Value::Tuple(all))?;
                    self.stack.push(v);
                }
                0x92 => {
                    let _kwargs = self.pop()?;
                    let args = self.pop()?;
                    let cls = self.pop()?;
                    let mut all = vec![cls];
                    all.extend(args.items().ok_or("NEWOBJ_EX arguments are not a tuple")?);
                    let v = Self::reduce(Value::Global("copyreg".into(), "__newobj__".into()), Value::Tuple(all))?;
                    self.stack.push(v);
                }
                b'b' => {
                    let state = self.pop()?;
                    match self.top()? {
                        Value::Object(o) => o.borrow_mut().state = Some(state),
                        _ => return Err("BUILD on a non-object".into()),
                    }
                }
                b'0' => {
                    self.pop()?;
                }
                b'2' => {
                    let v = self.top()?.clone();
                    self.stack.push(v);
                }
                b'1' => {
                    self.pop_mark()?;
                }
                other => {
                    return Err(format!(
                        "unsupported pickle opcode 0x{other:02x} at byte {}",
                        self.pos - 1
                    ))
                }
            }
        }
    }
}

/// A numpy array flattened to f64 in C order, with its shape.
pub(crate) struct NdArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn dtype_descr(v: &Value) -> Option<String> {
    match v {
        Value::Object(o) => o.borrow().args.first().and_then(Value::as_text),
        _ => v.as_text(),
    }
}

fn dtype_byte_order(v: &Value) -> Option<String> {
    let Value::Object(o) = v else { return None };
    let state = o.borrow().state.clone()?;
    state.items()?.get(1).and_then(Value::as_text)
}

fn decode_raw(descr: &str, big_endian: bool, raw: &[u8]) -> Result<Vec<f64>, String> {
    let descr = descr.trim_start_matches(['<', '>', '=', '|']);
    macro_rules! conv {
        ($t:ty, $n:expr) => {{
            if !raw.len().is_multiple_of($n) {
                return Err(format!("raw data length {} is not a multiple of {}", raw.len(), $n));
            }
            raw.chunks_exact($n)
                .map(|c| {
                    let b: [u8; $n] = c.try_into().unwrap();
                    (if big_endian {
                        <$t>::from_be_bytes(b)
                    } else {
                        <$t>::from_le_bytes(b)
                    }) as f64
                })
                .collect()
        }};
    }
    Ok(match descr {
        "f8" => conv!(f64, 8),
        "f4" => conv!(f32, 4),
        "i8" => conv!(i64, 8),
        "i4" => conv!(i32, 4),
        "i2" => conv!(i16, 2),
        "i1" => conv!(i8, 1),
        "u8" => conv!(u64, 8),
        "u4" => conv!(u32, 4),
        "u2" => conv!(u16, 2),
        "u1" | "b1" => conv!(u8, 1),
        other => return Err(format!("unsupported numpy dtype {other:?}")),
    })
}

/// Interprets a pickled `numpy.ndarray` (or matrix subclass).
pub(crate) fn ndarray(v: &Value) -> Result<NdArray, String> {
    let Value::Object(o) = v else {
        return Err("expected a numpy array object".into());
    };
    let state = o.borrow().state.clone().ok_or("numpy array without state")?;
    let st = state.items().ok_or("numpy array state is not a tuple")?;
    // (version, shape, dtype, fortran, raw)
    let (shape, dtype, fortran, raw) = match st.len() {
        5 => (&st[1], &st[2], &st[3], &st[4]),
        4 => (&st[0], &st[1], &st[2], &st[3]),
        n => return Err(format!("unexpected numpy state arity {n}")),
    };
    let shape: Vec<usize> = shape
        .items()
        .ok_or("numpy shape is not a tuple")?
        .iter()
        .map(|d| d.as_int().map(|i| i as usize).ok_or("non-integer numpy dimension"))
        .collect::<Result<_, _>>()?;
    let descr = dtype_descr(dtype).ok_or("unreadable numpy dtype")?;
    let big = descr.starts_with('>') || dtype_byte_order(dtype).as_deref() == Some(">");
    let count: usize = shape.iter().product();
    let mut data = match raw.as_bytes() {
        Some(b) => decode_raw(&descr, big, &b)?,
        None => raw
            .items()
            .ok_or("numpy raw data is neither bytes nor a list")?
            .iter()
            .map(|x| match x {
                Value::Float(f) => Ok(*f),
                other => other.as_int().map(|i| i as f64).ok_or("non-numeric array element"),
            })
            .collect::<Result<_, _>>()?,
    };
    if data.len() != count {
        return Err(format!("numpy array has {} elements, shape says {count}", data.len()));
    }
    if fortran.as_int() == Some(1) && shape.len() == 2 {
        let (r, c) = (shape[0], shape[1]);
        let mut t = vec![0.0; count];
        for j in 0..c {
            for i in 0..r {
                t[i * c + j] = data[j * r + i];
            }
        }
        data = t;
    }
    Ok(NdArray { shape, data })
}
