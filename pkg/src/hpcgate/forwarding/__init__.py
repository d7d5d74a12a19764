from .models import DirEntry, JobInfo, JobRequest, JobState
from .service import Forwarder

__all__ = ["DirEntry", "JobInfo", "JobRequest", "JobState", "Forwarder"]
