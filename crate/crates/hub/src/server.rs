use std::io;
use std::net::SocketAddr;

use axum::Router;
use tokio::net::TcpListener;
use tokio::runtime::Runtime;
use tokio::task::JoinHandle;

pub fn bind(rt: &Runtime, addr: &str) -> io::Result<TcpListener> {
    rt.block_on(TcpListener::bind(addr))
}

/// Serves `router` on an already bound listener until the runtime shuts down.
pub fn serve(rt: &Runtime, listener: TcpListener, router: Router) -> io::Result<(SocketAddr, JoinHandle<()>)> {
    let local = listener.local_addr()?;
    let handle = rt.spawn(async move {
        if let Err(e) = axum::serve(listener, router).await {
            log::error!("server on {local} stopped: {e}");
        }
    });
    Ok((local, handle))
}

pub fn spawn(rt: &Runtime, addr: &str, router: Router) -> io::Result<(SocketAddr, JoinHandle<()>)> {
    serve(rt, bind(rt, addr)?, router)
}

/// An ephemeral loopback port.
pub fn spawn_local(rt: &Runtime, router: Router) -> io::Result<(String, JoinHandle<()>)> {
    let (addr, handle) = spawn(rt, "127.0.0.1:0", router)?;
    Ok((format!("http://{addr}"), handle))
}
