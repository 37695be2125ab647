import { ApiClient } from "./api";
import { RatingApp } from "./ui";

const root = document.getElementById("app");
if (root) {
  const token = new URLSearchParams(window.location.search).get("token");
  if (!token) {
    root.innerHTML = `
      <section class="card" data-testid="invalid-link">
        <h1>Invalid link</h1>
        <p>This page needs a session link of the form ?token=&lt;your token&gt;.</p>
      </section>`;
  } else {
    const app = new RatingApp(root, new ApiClient("", token));
    void app.start();
  }
}
