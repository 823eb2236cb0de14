// Typed client for the session service. The fetch implementation is
// injectable so tests can run against a stub with no service built.
export class ServiceError extends Error {
    constructor(detail) {
        super(detail.message);
        this.detail = detail;
    }
}
function normalizeDetail(payload) {
    if (payload && typeof payload === "object" && "detail" in payload) {
        const detail = payload.detail;
        if (detail && typeof detail === "object" && "message" in detail) {
            const d = detail;
            return {
                code: d.code ?? "error",
                message: d.message ?? "request failed",
                suggestions: d.suggestions ?? [],
            };
        }
        return { code: "error", message: JSON.stringify(detail), suggestions: [] };
    }
    return { code: "error", message: "request failed", suggestions: [] };
}
export class ServiceClient {
    constructor(baseUrl, fetchImpl) {
        this.baseUrl = baseUrl.replace(/\/+$/, "");
        this.fetchImpl = fetchImpl ?? fetch;
    }
    async request(method, path, body) {
        const response = await this.fetchImpl(this.baseUrl + path, {
            method,
            headers: { "Content-Type": "application/json" },
            body: body === undefined ? undefined : JSON.stringify(body),
        });
        const payload = await response.json();
        if (!response.ok) {
            throw new ServiceError(normalizeDetail(payload));
        }
        return payload;
    }
    createSession(topicEntityKey) {
        return this.request("POST", "/sessions", {
            topic_entity_key: topicEntityKey,
        });
    }
    ask(sessionId, question, topK = 10) {
        return this.request("POST", `/sessions/${sessionId}/ask`, {
            question,
            top_k: topK,
        });
    }
    deleteSession(sessionId) {
        return this.request("DELETE", `/sessions/${sessionId}`);
    }
}
