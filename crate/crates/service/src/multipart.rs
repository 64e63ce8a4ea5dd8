//! Just enough multipart/form-data to pull the first file part out of an
//! upload.

/// Boundary parameter of a multipart content type, if any.
pub fn boundary(content_type: &str) -> Option<String> {
    let (kind, params) = content_type.split_once(';')?;
    if !kind.trim().eq_ignore_ascii_case("multipart/form-data") {
        return None;
    }
    params.split(';').find_map(|p| {
        let (k, v) = p.split_once('=')?;
        k.trim()
            .eq_ignore_ascii_case("boundary")
            .then(|| v.trim().trim_matches('"').to_string())
    })
}

fn find(haystack: &[u8], needle: &[u8], from: usize) -> Option<usize> {
    if needle.is_empty() || haystack.len() < needle.len() {
        return None;
    }
    (from..=haystack.len() - needle.len()).find(|&i| &haystack[i..i + needle.len()] == needle)
}

/// Body of the first part. Prefers a part carrying a filename.
pub fn first_part<'a>(body: &'a [u8], boundary: &str) -> Option<&'a [u8]> {
    let delim = format!("--{boundary}").into_bytes();
    let mut parts = Vec::new();
    let mut pos = find(body, &delim, 0)?;
    loop {
        let start = pos + delim.len();
        if body[start..].starts_with(b"--") {
            break;
        }
        let next = find(body, &delim, start)?;
        parts.push(&body[start..next]);
        pos = next;
    }
    let split = |part: &'a [u8]| -> Option<(&'a [u8], &'a [u8])> {
        let h = find(part, b"\r\n\r\n", 0)?;
        let content = &part[h + 4..];
        let content = content.strip_suffix(b"\r\n").unwrap_or(content);
        Some((&part[..h], content))
    };
    let parsed: Vec<_> = parts.into_iter().filter_map(split).collect();
    parsed
        .iter()
        .find(|(headers, _)| {
            String::from_utf8_lossy(headers)
                .to_ascii_lowercase()
                .contains("filename=")
        })
        .or_else(|| parsed.first())
        .map(|(_, content)| *content)
}
