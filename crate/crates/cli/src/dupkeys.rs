//! Minimal structural scan of a JSON document for duplicate object keys.
//! serde_json keeps the last value for a repeated key; this pass makes the
//! silent overwrite visible as a warning with a pointer path.

pub fn find_duplicate_keys(src: &str) -> Vec<String> {
    let mut dups = Vec::new();
    let bytes = src.as_bytes();
    let mut pos = 0usize;
    let mut path: Vec<String> = Vec::new();
    // a malformed document just yields no warnings; the real parser reports
    let _ = scan_value(bytes, &mut pos, &mut path, &mut dups);
    dups
}

fn skip_ws(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() && matches!(bytes[*pos], b' ' | b'\t' | b'\n' | b'\r') {
        *pos += 1;
    }
}

fn scan_value(
    bytes: &[u8],
    pos: &mut usize,
    path: &mut Vec<String>,
    dups: &mut Vec<String>,
) -> Result<(), ()> {
    skip_ws(bytes, pos);
    match bytes.get(*pos) {
        Some(b'{') => scan_object(bytes, pos, path, dups),
        Some(b'[') => scan_array(bytes, pos, path, dups),
        Some(b'"') => scan_string(bytes, pos).map(|_| ()),
        Some(_) => {
            // number / true / false / null: consume until a delimiter
            while *pos < bytes.len()
                && !matches!(
                    bytes[*pos],
                    b',' | b'}' | b']' | b' ' | b'\t' | b'\n' | b'\r'
                )
            {
                *pos += 1;
            }
            Ok(())
        }
        None => Err(()),
    }
}

fn scan_object(
    bytes: &[u8],
    pos: &mut usize,
    path: &mut Vec<String>,
    dups: &mut Vec<String>,
) -> Result<(), ()> {
    *pos += 1; // '{'
    let mut seen = std::collections::HashSet::new();
    loop {
        skip_ws(bytes, pos);
        match bytes.get(*pos) {
            Some(b'}') => {
                *pos += 1;
                return Ok(());
            }
            Some(b'"') => {
                let key = scan_string(bytes, pos)?;
                if !seen.insert(key.clone()) {
                    dups.push(format!("/{}{}", path_join(path), key));
                }
                skip_ws(bytes, pos);
                if bytes.get(*pos) != Some(&b':') {
                    return Err(());
                }
                *pos += 1;
                path.push(key);
                scan_value(bytes, pos, path, dups)?;
                path.pop();
                skip_ws(bytes, pos);
                match bytes.get(*pos) {
                    Some(b',') => *pos += 1,
                    Some(b'}') => {}
                    _ => return Err(()),
                }
            }
            _ => return Err(()),
        }
    }
}

fn scan_array(
    bytes: &[u8],
    pos: &mut usize,
    path: &mut Vec<String>,
    dups: &mut Vec<String>,
) -> Result<(), ()> {
    *pos += 1; // '['
    let mut index = 0usize;
    loop {
        skip_ws(bytes, pos);
        match bytes.get(*pos) {
            Some(b']') => {
                *pos += 1;
                return Ok(());
            }
            Some(_) => {
                path.push(index.to_string());
                scan_value(bytes, pos, path, dups)?;
                path.pop();
                index += 1;
                skip_ws(bytes, pos);
                match bytes.get(*pos) {
                    Some(b',') => *pos += 1,
                    Some(b']') => {}
                    _ => return Err(()),
                }
            }
            None => return Err(()),
        }
    }
}

fn scan_string(bytes: &[u8], pos: &mut usize) -> Result<String, ()> {
    debug_assert_eq!(bytes.get(*pos), Some(&b'"'));
    *pos += 1;
    let start = *pos;
    let mut out = Vec::new();
    while *pos < bytes.len() {
        match bytes[*pos] {
            b'"' => {
                if out.is_empty() {
                    out.extend_from_slice(&bytes[start..*pos]);
                }
                *pos += 1;
                return String::from_utf8(out).map_err(|_| ());
            }
            b'\\' => {
                if out.is_empty() {
                    out.extend_from_slice(&bytes[start..*pos]);
                }
                *pos += 1;
                match bytes.get(*pos) {
                    Some(b'u') => {
                        out.push(b'?'); // identity is irrelevant, only equality
                        *pos += 5;
                    }
                    Some(&c) => {
                        out.push(c);
                        *pos += 1;
                    }
                    None => return Err(()),
                }
            }
            c => {
                if !out.is_empty() {
                    out.push(c);
                }
                *pos += 1;
            }
        }
    }
    Err(())
}

fn path_join(path: &[String]) -> String {
    if path.is_empty() {
        String::new()
    } else {
        format!("{}/", path.join("/"))
    }
}
