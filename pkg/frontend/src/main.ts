import { ApiClient } from "./api.js";
import { App } from "./app.js";

const app = new App(new ApiClient());
document.body.append(app.root);
app.start().catch((error) => {
  const message = document.createElement("pre");
  message.className = "startup-error";
  message.textContent = `failed to start: ${error}`;
  document.body.append(message);
});
