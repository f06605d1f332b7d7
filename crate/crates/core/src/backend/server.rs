//! A minimal blocking HTTP/1.1 front end that exposes any [`Transport`]
//! (normally the synthetic backend) on a TCP socket. One request per
//! connection; bodies must carry `Content-Length`.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use super::transport::Transport;

pub fn serve(listener: TcpListener, handler: Arc<dyn Transport>) -> io::Result<()> {
    for conn in listener.incoming() {
        let conn = conn?;
        let handler = handler.clone();
        thread::spawn(move || {
            if let Err(e) = handle(conn, handler.as_ref()) {
                log::warn!("connection error: {e}");
            }
        });
    }
    Ok(())
}

fn handle(stream: TcpStream, handler: &dyn Transport) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_owned();
    let path = parts.next().unwrap_or_default().to_owned();

    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line.trim().is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;

    let (status, payload) = if method != "POST" {
        (405, r#"{"error":"only POST is supported","code":"method_not_allowed"}"#.to_owned())
    } else {
        match String::from_utf8(body) {
            Ok(body) => match handler.post(&path, &body) {
                Ok(resp) => (resp.status, resp.body),
                Err(e) => (502, format!(r#"{{"error":{:?},"code":"upstream"}}"#, e.0)),
            },
            Err(_) => (400, r#"{"error":"body is not UTF-8","code":"bad_request"}"#.to_owned()),
        }
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} {}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
        reason(status),
        payload.len()
    )?;
    out.flush()
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        422 => "Unprocessable Entity",
        502 => "Bad Gateway",
        503 => "Service Unavailable",
        507 => "Insufficient Storage",
        s if s >= 500 => "Server Error",
        _ => "Unknown",
    }
}
