import { bootstrap } from "./app.js";

document.addEventListener("DOMContentLoaded", () => {
  bootstrap();
});
