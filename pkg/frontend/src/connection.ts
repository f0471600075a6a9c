// WebSocket link to the debug client's frontend API, with auto-reconnect.

import type { FrontendCommand, FrontendEvent } from "./types.js";

export class FrontendConnection {
  private socket: WebSocket | null = null;
  private closed = false;

  constructor(
    private readonly url: string,
    private readonly onEvent: (event: FrontendEvent) => void,
    private readonly onStatus: (connected: boolean) => void,
  ) {
    this.dial();
  }

  send(command: FrontendCommand): void {
    if (this.socket && this.socket.readyState === WebSocket.OPEN) {
      this.socket.send(JSON.stringify(command));
    }
  }

  close(): void {
    this.closed = true;
    this.socket?.close();
  }

  private dial(): void {
    const socket = new WebSocket(this.url);
    this.socket = socket;
    socket.onopen = () => this.onStatus(true);
    socket.onmessage = (msg) => {
      try {
        this.onEvent(JSON.parse(msg.data as string) as FrontendEvent);
      } catch {
        console.warn("unparseable frontend event", msg.data);
      }
    };
    socket.onclose = () => {
      this.onStatus(false);
      if (!this.closed) setTimeout(() => this.dial(), 2000);
    };
    socket.onerror = () => socket.close();
  }
}
