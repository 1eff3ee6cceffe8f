use hexgait_client::{Client, ClientError};
use hexgait_core::api::{ErrorKind, ModelInput};
use tokio::io::{AsyncReadExt, AsyncWriteExt};

/// One-shot HTTP stub answering every request with `status` and `body`.
async fn stub(status: &'static str, content_type: &'static str, body: &'static str) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        while let Ok((mut sock, _)) = listener.accept().await {
            let mut buf = vec![0u8; 64 * 1024];
            let _ = sock.read(&mut buf).await;
            let resp = format!("HTTP/1.1 {status}\r\ncontent-type: {content_type}\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}", body.len());
            let _ = sock.write_all(resp.as_bytes()).await;
        }
    });
    format!("http://{addr}/")
}

fn model() -> ModelInput {
    ModelInput { robot: String::new(), gaits: None }
}

#[tokio::test]
async fn error_bodies_keep_their_kind() {
    let url = stub("422 Unprocessable Entity", "application/json", r#"{"kind":"validation","message":"no legs"}"#).await;
    match Client::new(url).validate(&model()).await {
        Err(ClientError::Api(e)) => {
            assert_eq!(e.kind, ErrorKind::Validation);
            assert_eq!(e.message, "no legs");
        }
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn bare_statuses_are_classified() {
    let url = stub("400 Bad Request", "text/plain", "nope").await;
    assert!(Client::new(url).validate(&model()).await.unwrap_err().is_validation());
    let url = stub("500 Internal Server Error", "text/plain", "boom").await;
    let e = Client::new(url).validate(&model()).await.unwrap_err();
    assert!(!e.is_validation());
    assert!(e.to_string().contains("boom"));
}

#[tokio::test]
async fn unreachable_server_is_not_a_validation_error() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let e = Client::new(format!("http://127.0.0.1:{port}")).health().await.unwrap_err();
    assert!(matches!(e, ClientError::Http(_)), "{e:?}");
    assert!(!e.is_validation());
}

#[test]
fn base_url_is_normalised() {
    assert_eq!(Client::new("http://h:1//").base(), "http://h:1");
}
