import { beforeEach, describe, expect, it } from "vitest";

import { TrainerApi } from "../src/api.js";
import { TrainerStore, composerEnabled } from "../src/state.js";
import { FakeServer, SCRIPT, fetchFor } from "./fake_server.js";

let server: FakeServer;
let store: TrainerStore;
let tokenCounter: number;

beforeEach(() => {
  server = new FakeServer();
  tokenCounter = 0;
  store = new TrainerStore(new TrainerApi("http://fake", fetchFor(server)), () => {
    tokenCounter += 1;
    return `tok-${tokenCounter}`;
  });
});

describe("start_training_flow", () => {
  it("opens the chat with the bot's opening message first", async () => {
    await store.startTraining("refund");
    expect(store.state.sessionId).toBe("s-1");
    expect(store.state.messages).toHaveLength(1);
    expect(store.state.messages[0]).toMatchObject({
      speaker: "bot",
      text: SCRIPT[0]!.text,
    });
    expect(store.state.phase).toBe("active");
  });

  it("a failed create leaves no phantom session and shows a banner", async () => {
    await store.startTraining("does-not-exist");
    expect(store.state.sessionId).toBeNull();
    expect(store.state.phase).toBe("idle");
    expect(store.state.sceneError).toContain("not_found");
  });

  it("reload mid-session restores the transcript in server order", async () => {
    await store.startTraining("refund");
    store.setComposer(SCRIPT[1]!.text);
    await store.sendMessage();
    const expected = server.sessions.get("s-1")!.transcript.map((t) => t.text);

    const fresh = new TrainerStore(new TrainerApi("http://fake", fetchFor(server)));
    await fresh.resumeSession("s-1");
    expect(fresh.state.messages.map((m) => m.text)).toEqual(expected);
    expect(fresh.state.phase).toBe("active");
  });
});

describe("send_trainee_message", () => {
  beforeEach(async () => {
    await store.startTraining("refund");
  });

  it("renders the trainee turn optimistically, then the bot reply", async () => {
    store.setComposer(SCRIPT[1]!.text);
    const sending = store.sendMessage();
    expect(store.state.messages.at(-1)).toMatchObject({
      speaker: "trainee",
      optimistic: true,
    });
    expect(store.state.pending).toBe(true);
    await sending;
    expect(store.state.pending).toBe(false);
    const last = store.state.messages.at(-1)!;
    expect(last.speaker).toBe("bot");
    expect(last.tag).toBe("script_advance");
    expect(store.state.messages.some((m) => m.optimistic)).toBe(false);
  });

  it("a double send produces exactly one trainee turn", async () => {
    store.setComposer(SCRIPT[1]!.text);
    const first = store.sendMessage();
    const second = store.sendMessage(); // composer already cleared + pending
    await Promise.all([first, second]);
    expect(server.messageRequests).toBe(1);
    const trainee = store.state.messages.filter((m) => m.speaker === "trainee");
    expect(trainee).toHaveLength(1);
    expect(server.sessions.get("s-1")!.transcript.filter((t) => t.speaker === "trainee")).toHaveLength(1);
  });

  it("a network failure keeps the token and retries without duplicating", async () => {
    server.failNetwork = 1;
    store.setComposer(SCRIPT[1]!.text);
    await store.sendMessage();
    expect(store.state.error).toContain("network down");
    expect(store.state.retryText).toBe(SCRIPT[1]!.text);
    const tokenAfterFailure = store.state.lastToken;

    await store.retrySend();
    expect(store.state.error).toBeNull();
    expect(tokenCounter).toBe(1); // same token reused, no new one minted
    expect(tokenAfterFailure).toBe("tok-1");
    const trainee = store.state.messages.filter((m) => m.speaker === "trainee");
    expect(trainee).toHaveLength(1);
  });

  it("completion fetches the score and shows the panel state", async () => {
    store.setComposer(SCRIPT[1]!.text);
    await store.sendMessage();
    store.setComposer(SCRIPT[3]!.text);
    await store.sendMessage();
    expect(store.state.phase).toBe("completed");
    expect(store.state.score).not.toBeNull();
    expect(store.state.score!.consistency).toBe(1);
    expect(composerEnabled(store.state)).toBe(false);
  });

  it("composer is enabled exactly when active and not pending", async () => {
    expect(composerEnabled(store.state)).toBe(true);
    store.setComposer(SCRIPT[1]!.text);
    const sending = store.sendMessage();
    expect(composerEnabled(store.state)).toBe(false); // pending
    await sending;
    expect(composerEnabled(store.state)).toBe(true);
    await store.quitSession();
    expect(store.state.phase).toBe("abandoned");
    expect(composerEnabled(store.state)).toBe(false);
  });
});

describe("hints", () => {
  it("mirrors the server's hint gating", async () => {
    await store.startTraining("refund");
    await store.requestHint();
    expect(store.state.hint!.revealed).toBe(false);
    expect(store.state.hint!.full_text).toBeNull();

    store.setComposer("wrong answer one");
    await store.sendMessage();
    store.setComposer("wrong answer two");
    await store.sendMessage();
    await store.requestHint();
    expect(store.state.hint!.revealed).toBe(true);
    expect(store.state.hint!.full_text).toBe(SCRIPT[1]!.text);
    // hint turns are mirrored into the message list like the server transcript
    expect(store.state.messages.at(-1)!.tag).toBe("hint");
  });
});

describe("metrics_dashboard", () => {
  it("loads metrics verbatim", async () => {
    await store.loadMetrics();
    expect(store.state.metrics).toEqual({
      num_sessions: 2,
      waiting_time_avg: 3.1,
      avg_duration: 6.8,
      avg_rounds: 20.8,
      completion_rate: 80.2,
    });
  });
});
