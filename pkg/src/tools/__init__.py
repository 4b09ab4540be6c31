"""Harness tools: experiment runner, artifact persistence and report rendering"""
from .persistence import read_manifest, verify_manifest, write_manifest, write_table
from .report_tool import ReportTool

__all__ = ["ReportTool", "read_manifest", "verify_manifest", "write_manifest", "write_table"]
