// Browser entry point. Served as static assets by the engine's service
// binary; talks to the same origin.

import { ApiClient } from "./api.js";
import { ReviewController, type KVStore } from "./state.js";
import { mountApp } from "./view.js";

function localStore(): KVStore {
  return {
    get: (key) => window.localStorage.getItem(key),
    set: (key, value) => window.localStorage.setItem(key, value),
    remove: (key) => window.localStorage.removeItem(key),
  };
}

const root = document.getElementById("app");
if (root === null) throw new Error("missing #app element");

const controller = new ReviewController(new ApiClient(""), localStore());
mountApp(root, controller);
void controller.start();
