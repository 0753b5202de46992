"""Tests for the Digido Digital Assistant."""
